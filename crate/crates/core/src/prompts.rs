//! Prompt templates for the language-model stages.
//!
//! Templates are plain text with `{name}` placeholders. The built-in set
//! ships as assets under `assets/prompts/`; any template can be replaced
//! through [`PromptSet`]'s serde form, which fills missing fields from the
//! built-ins.

use serde::{Deserialize, Serialize};

use crate::backend::ChatMessage;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("template {template} is missing placeholder {{{placeholder}}}")]
    TemplateMissingPlaceholder { template: &'static str, placeholder: &'static str },
    #[error("few-shot exemplar {index} is invalid: {reason}")]
    InvalidExemplar { index: usize, reason: String },
}

/// One worked example shown to the selector before the real question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub object: String,
    pub tags: Vec<String>,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSet {
    pub llm_system: String,
    pub llm_user: String,
    pub mllm_tag: String,
    pub mllm_select_system: String,
    pub mllm_select_user: String,
    pub direct_system: String,
    pub direct_user: String,
    pub vqa_question: String,
    pub retry: String,
    pub edit_instruction: String,
    pub few_shot: Vec<FewShotExample>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            llm_system: include_str!("../assets/prompts/llm_system.txt").into(),
            llm_user: include_str!("../assets/prompts/llm_user.txt").into(),
            mllm_tag: include_str!("../assets/prompts/mllm_tag.txt").into(),
            mllm_select_system: include_str!("../assets/prompts/mllm_select_system.txt").into(),
            mllm_select_user: include_str!("../assets/prompts/mllm_select_user.txt").into(),
            direct_system: include_str!("../assets/prompts/direct_system.txt").into(),
            direct_user: include_str!("../assets/prompts/direct_user.txt").into(),
            vqa_question: include_str!("../assets/prompts/vqa.txt").into(),
            retry: include_str!("../assets/prompts/retry.txt").into(),
            edit_instruction: include_str!("../assets/prompts/edit.txt").into(),
            few_shot: serde_json::from_str(include_str!("../assets/prompts/few_shot.json"))
                .expect("built-in few-shot exemplars parse"),
        }
    }
}

impl PromptSet {
    fn requirements(&self) -> [(&'static str, &str, &'static [&'static str]); 10] {
        [
            ("llm_system", &self.llm_system, &[]),
            ("llm_user", &self.llm_user, &["object", "tags"]),
            ("mllm_tag", &self.mllm_tag, &[]),
            ("mllm_select_system", &self.mllm_select_system, &[]),
            ("mllm_select_user", &self.mllm_select_user, &["object"]),
            ("direct_system", &self.direct_system, &["width", "height"]),
            ("direct_user", &self.direct_user, &["object"]),
            ("vqa_question", &self.vqa_question, &["noun"]),
            ("retry", &self.retry, &["answer", "tags"]),
            ("edit_instruction", &self.edit_instruction, &["object"]),
        ]
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        for (template, text, required) in self.requirements() {
            for &placeholder in required {
                if !text.contains(&format!("{{{placeholder}}}")) {
                    return Err(PromptError::TemplateMissingPlaceholder { template, placeholder });
                }
            }
        }
        for (index, ex) in self.few_shot.iter().enumerate() {
            let bad = |reason: &str| PromptError::InvalidExemplar {
                index,
                reason: reason.to_string(),
            };
            if ex.object.trim().is_empty() || ex.tags.is_empty() {
                return Err(bad("object and tags must be non-empty"));
            }
            if !ex.tags.contains(&ex.answer) {
                return Err(bad("answer is not one of the tags"));
            }
        }
        Ok(())
    }

    /// Selector conversation: instructions plus worked examples as the
    /// system message, the actual question as the user message.
    pub fn selector_messages(&self, tags: &[String], object: &str) -> Vec<ChatMessage> {
        let mut system = self.llm_system.clone();
        if !self.few_shot.is_empty() {
            system.push_str("\n\nExamples:");
            for ex in &self.few_shot {
                system.push_str("\n\n");
                system.push_str(&render(&self.llm_user, &[("object", &ex.object), ("tags", &ex.tags.join(", "))]));
                system.push_str("\nAnswer: ");
                system.push_str(&ex.answer);
            }
        }
        let user = render(&self.llm_user, &[("object", object), ("tags", &tags.join(", "))]);
        vec![ChatMessage::system(system), ChatMessage::user(user)]
    }
}

/// Substitute `{key}` placeholders in a single left-to-right pass, so
/// substituted values are never re-scanned. Unknown placeholders are left
/// as written.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let key = &after[..close];
            vars.iter().find(|(k, _)| *k == key).map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Role;

    #[test]
    fn builtins_validate() {
        PromptSet::default().validate().unwrap();
        assert_eq!(PromptSet::default().few_shot.len(), 3);
    }

    #[test]
    fn render_single_pass() {
        assert_eq!(render("a {x} b {y} {z}", &[("x", "{y}"), ("y", "2")]), "a {y} b 2 {z}");
        assert_eq!(render("{", &[]), "{");
        assert_eq!(render("}{x", &[("x", "1")]), "}{x");
    }

    #[test]
    fn selector_user_message() {
        let p = PromptSet::default();
        let m = p.selector_messages(&["floor".into(), "table".into()], "cupcake");
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].role, Role::System);
        assert!(m[0].content.starts_with(&p.llm_system));
        assert_eq!(m[0].content.matches("\nAnswer: ").count(), 3);
        assert_eq!(
            m[1].content,
            "Question: Where would be the most natural location for a cupcake to be placed? Possible Answers: floor, table"
        );
    }

    #[test]
    fn missing_placeholder() {
        let p = PromptSet {
            direct_system: "The image is {width} pixels wide.".into(),
            ..Default::default()
        };
        assert_eq!(
            p.validate(),
            Err(PromptError::TemplateMissingPlaceholder {
                template: "direct_system",
                placeholder: "height"
            })
        );
    }

    #[test]
    fn partial_override_keeps_builtins() {
        let p: PromptSet = serde_json::from_str(r#"{"vqa_question": "Does the image contain a {noun}?"}"#).unwrap();
        assert_eq!(p.vqa_question, "Does the image contain a {noun}?");
        assert_eq!(p.llm_user, PromptSet::default().llm_user);
        assert!(serde_json::from_str::<PromptSet>(r#"{"typo": ""}"#).is_err());
    }

    #[test]
    fn exemplar_answer_must_be_a_tag() {
        let mut p = PromptSet::default();
        p.few_shot[0].answer = "sofa".into();
        assert!(matches!(p.validate(), Err(PromptError::InvalidExemplar { index: 0, .. })));
    }
}
