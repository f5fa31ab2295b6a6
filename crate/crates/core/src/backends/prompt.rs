use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Domain that matches any domain without an exact rule.
pub const WILDCARD_DOMAIN: &str = "*";

/// Fallback prompt for in-the-wild images (the Stable Diffusion inpainting default).
pub const SCENE_PROMPT: &str = "photograph of a beautiful empty scene, highest quality settings";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRule {
    pub domain: String,
    pub prompt: String,
}

impl PromptRule {
    pub fn new(domain: impl Into<String>, prompt: impl Into<String>) -> Result<Self> {
        let rule = Self {
            domain: domain.into(),
            prompt: prompt.into(),
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        if self.domain.is_empty() || self.prompt.is_empty() {
            return Err(Error::invalid(format!(
                "prompt rule needs a non-empty domain and prompt, got {:?} -> {:?}",
                self.domain, self.prompt
            )));
        }
        Ok(())
    }
}

/// Fixed prompts per image domain: faces, full-body humans, bedrooms, and a scene prompt
/// for everything else.
pub fn default_rules() -> Vec<PromptRule> {
    [
        ("ffhq", "a person's face"),
        ("face", "a person's face"),
        ("ldm_face", "a person's face"),
        ("human", "a person"),
        ("virtual_tryon", "a person"),
        ("lsun_bedroom", "bedroom"),
        (WILDCARD_DOMAIN, SCENE_PROMPT),
    ]
    .into_iter()
    .map(|(domain, prompt)| PromptRule {
        domain: domain.into(),
        prompt: prompt.into(),
    })
    .collect()
}

/// Exact domain match wins, then the wildcard rule, then [`SCENE_PROMPT`].
pub fn default_prompt<'a>(rules: &'a [PromptRule], domain: &str) -> &'a str {
    rules
        .iter()
        .find(|r| r.domain == domain)
        .or_else(|| rules.iter().find(|r| r.domain == WILDCARD_DOMAIN))
        .map_or(SCENE_PROMPT, |r| r.prompt.as_str())
}
