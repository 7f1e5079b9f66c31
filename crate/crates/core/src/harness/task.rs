use regex::Regex;
use serde::{Deserialize, Serialize};

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub input: String,
    pub answer: String,
}

/// A few-shot task. The first `n_shot` examples become demonstrations and
/// the rest are evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    #[serde(default)]
    pub n_shot: usize,
    /// Template with `{shots}` and `{input}` slots.
    pub prompt_template: String,
    /// Template for one demonstration, with `{input}` and `{answer}` slots.
    #[serde(default = "default_shot_template")]
    pub shot_template: String,
    #[serde(default = "default_separator")]
    pub shot_separator: String,
    /// Regular expression; the last match is the answer, or its first
    /// capture group when it has one.
    pub answer_pattern: String,
    pub examples: Vec<Example>,
}

fn default_shot_template() -> String {
    "{input}{answer}".into()
}

fn default_separator() -> String {
    "\n".into()
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |why: String| Err(HarnessError::Config(format!("task {}: {why}", self.name)));
        if !self.prompt_template.contains("{input}") {
            return fail("prompt_template lacks an {input} slot".into());
        }
        if self.n_shot >= self.examples.len() {
            return fail(format!(
                "n_shot = {} leaves no examples to evaluate out of {}",
                self.n_shot,
                self.examples.len()
            ));
        }
        if let Err(e) = Regex::new(&self.answer_pattern) {
            return fail(format!("answer_pattern: {e}"));
        }
        Ok(())
    }

    pub fn shots(&self) -> &[Example] {
        &self.examples[..self.n_shot]
    }

    pub fn items(&self) -> &[Example] {
        &self.examples[self.n_shot..]
    }

    pub fn pattern(&self) -> Result<Regex, HarnessError> {
        Regex::new(&self.answer_pattern)
            .map_err(|e| HarnessError::Config(format!("task {}: {e}", self.name)))
    }

    pub fn render_prompt(&self, input: &str) -> String {
        let shots: Vec<String> = self
            .shots()
            .iter()
            .map(|s| {
                self.shot_template
                    .replace("{input}", &s.input)
                    .replace("{answer}", &s.answer)
            })
            .collect();
        self.prompt_template
            .replace("{shots}", &shots.join(&self.shot_separator))
            .replace("{input}", input)
    }
}

/// Applies the answer pattern to a generation. The last match wins.
pub fn extract_answer(generation: &str, pattern: &Regex) -> Option<String> {
    let caps = pattern.captures_iter(generation).last()?;
    let m = caps.get(1).or_else(|| caps.get(0))?;
    Some(m.as_str().to_string())
}
