//! Versioned prompt templates. Placeholders are `{name}`-style and are
//! filled by [`render`].

pub const PROMPT_VERSION: &str = "v1";

pub const SYSTEM: &str = include_str!("../prompts/system_v1.txt");
pub const CHAIN_OF_THOUGHT: &str = include_str!("../prompts/chain_of_thought_v1.txt");
pub const FEW_SHOT_INTRO: &str = include_str!("../prompts/few_shot_intro_v1.txt");
pub const L2M_CONTINENT: &str = include_str!("../prompts/l2m_continent_v1.txt");
pub const L2M_REGION: &str = include_str!("../prompts/l2m_region_v1.txt");
pub const L2M_NATIONALITY: &str = include_str!("../prompts/l2m_nationality_v1.txt");
pub const REFLECT: &str = include_str!("../prompts/reflect_v1.txt");
pub const USER: &str = include_str!("../prompts/user_v1.txt");

pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.trim_end().to_string();
    for (key, value) in vars {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

/// One label per line, prefixed with `- `.
pub fn label_list<S: AsRef<str>>(labels: &[S]) -> String {
    labels
        .iter()
        .map(|l| format!("- {}", l.as_ref()))
        .collect::<Vec<_>>()
        .join("\n")
}
