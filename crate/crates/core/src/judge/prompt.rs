//! The reward-evaluation system prompt sent to remote judges.

use alloc::string::String;

/// Template with `{question}` and `{ground_truth}` placeholders.
pub const REWARD_PROMPT_TEMPLATE: &str = include_str!("reward_prompt.txt");

/// Fills the template. A missing ground truth renders as `N/A`.
pub fn render_reward_prompt(question: &str, ground_truth: Option<&str>) -> String {
    REWARD_PROMPT_TEMPLATE.replacen("{question}", question, 1).replacen(
        "{ground_truth}",
        ground_truth.unwrap_or("N/A"),
        1,
    )
}
