use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved placeholder that receives the serialized few-shot examples.
pub const FEW_SHOT_PLACEHOLDER: &str = "few_shot_examples";

const DEFAULT_EXAMPLE_FORMAT: &str = "Input: {input}\nReasoning: {reasoning}\nOutput: {output}";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template `{template}` has unbound placeholder `{name}`")]
    Unbound { template: String, name: String },
    #[error("template `{template}` declares few-shot examples but has no {{few_shot_examples}} slot")]
    MissingExampleSlot { template: String },
    #[error("template `{template}` has an unterminated placeholder at byte {offset}")]
    Unterminated { template: String, offset: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub input: String,
    #[serde(default)]
    pub reasoning: String,
    pub output: String,
}

/// A prompt body with `{name}` placeholders. `{{` and `}}` produce literal
/// braces; anything between braces that is not an identifier is left as-is.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    #[serde(default)]
    pub few_shot_examples: Vec<FewShotExample>,
    /// Per-example layout using `{input}`, `{reasoning}` and `{output}`.
    #[serde(default)]
    pub example_format: Option<String>,
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn pieces<'a>(template: &str, body: &'a str) -> Result<Vec<Piece<'a>>, TemplateError> {
    let mut out = Vec::new();
    let bytes = body.as_bytes();
    let mut i = 0;
    let mut start = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                out.push(Piece::Text(&body[start..i + 1]));
                i += 2;
                start = i;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                out.push(Piece::Text(&body[start..i + 1]));
                i += 2;
                start = i;
            }
            b'{' => {
                let Some(close) = body[i + 1..].find('}') else {
                    return Err(TemplateError::Unterminated {
                        template: template.to_string(),
                        offset: i,
                    });
                };
                let name = &body[i + 1..i + 1 + close];
                if is_ident(name) {
                    out.push(Piece::Text(&body[start..i]));
                    out.push(Piece::Slot(name));
                    i += close + 2;
                    start = i;
                } else {
                    i += 1;
                }
            }
            _ => i += 1,
        }
    }
    out.push(Piece::Text(&body[start..]));
    Ok(out)
}

fn substitute(
    template: &str,
    body: &str,
    lookup: impl Fn(&str) -> Option<String>,
) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(body.len());
    for piece in pieces(template, body)? {
        match piece {
            Piece::Text(t) => out.push_str(t),
            Piece::Slot(name) => match lookup(name) {
                Some(v) => out.push_str(&v),
                None => {
                    return Err(TemplateError::Unbound {
                        template: template.to_string(),
                        name: name.to_string(),
                    })
                }
            },
        }
    }
    Ok(out)
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            body: body.into(),
            few_shot_examples: Vec::new(),
            example_format: None,
        }
    }

    pub fn with_examples(mut self, examples: Vec<FewShotExample>) -> Self {
        self.few_shot_examples = examples;
        self
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Result<Vec<String>, TemplateError> {
        let mut names: Vec<String> = Vec::new();
        for piece in pieces(&self.name, &self.body)? {
            if let Piece::Slot(n) = piece {
                if !names.iter().any(|x| x == n) {
                    names.push(n.to_string());
                }
            }
        }
        Ok(names)
    }

    /// Serialized few-shot block, examples separated by blank lines.
    pub fn render_examples(&self) -> Result<String, TemplateError> {
        let format = self.example_format.as_deref().unwrap_or(DEFAULT_EXAMPLE_FORMAT);
        let mut blocks = Vec::with_capacity(self.few_shot_examples.len());
        for ex in &self.few_shot_examples {
            // An example without reasoning drops the reasoning line entirely.
            let layout = if ex.reasoning.is_empty() {
                format
                    .lines()
                    .filter(|l| !l.contains("{reasoning}"))
                    .collect::<Vec<_>>()
                    .join("\n")
            } else {
                format.to_string()
            };
            let block = substitute(&self.name, &layout, |name| match name {
                "input" => Some(ex.input.clone()),
                "reasoning" => Some(ex.reasoning.clone()),
                "output" => Some(ex.output.clone()),
                _ => None,
            })?;
            blocks.push(block);
        }
        Ok(blocks.join("\n\n"))
    }

    /// Substitutes every placeholder. `{few_shot_examples}` is filled from the
    /// template's own examples unless explicitly bound.
    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, TemplateError> {
        let has_slot = self
            .placeholders()?
            .iter()
            .any(|n| n == FEW_SHOT_PLACEHOLDER);
        if !self.few_shot_examples.is_empty() && !has_slot {
            return Err(TemplateError::MissingExampleSlot {
                template: self.name.clone(),
            });
        }
        let examples = if has_slot {
            Some(self.render_examples()?)
        } else {
            None
        };
        substitute(&self.name, &self.body, |name| {
            bindings
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| v.to_string())
                .or_else(|| {
                    (name == FEW_SHOT_PLACEHOLDER)
                        .then(|| examples.clone())
                        .flatten()
                })
        })
    }
}
