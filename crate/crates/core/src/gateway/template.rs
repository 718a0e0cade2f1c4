use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GatewayError;

/// A prompt body with `{Name}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub template_id: String,
    pub body: String,
    pub required_placeholders: BTreeSet<String>,
}

fn is_name_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, ' ' | '-' | '_' | '.')
}

/// `(start, end, name)` for every `{name}` token in `body`; `end` is exclusive.
fn placeholders(body: &str) -> Vec<(usize, usize, &str)> {
    let mut out = Vec::new();
    let mut rest = 0;
    while let Some(open) = body[rest..].find('{').map(|i| i + rest) {
        let after = open + 1;
        match body[after..].find(|c: char| !is_name_char(c)) {
            Some(len) if len > 0 && body[after + len..].starts_with('}') => {
                let close = after + len;
                out.push((open, close + 1, &body[after..close]));
                rest = close + 1;
            }
            _ => rest = after,
        }
    }
    out
}

impl PromptTemplate {
    /// Fails if a required placeholder does not occur in the body.
    pub fn new<I, S>(template_id: impl Into<String>, body: impl Into<String>, required: I) -> Result<Self, GatewayError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let t = Self {
            template_id: template_id.into(),
            body: body.into(),
            required_placeholders: required.into_iter().map(Into::into).collect(),
        };
        let present: BTreeSet<&str> = placeholders(&t.body).into_iter().map(|(_, _, n)| n).collect();
        let absent: Vec<String> = t
            .required_placeholders
            .iter()
            .filter(|n| !present.contains(n.as_str()))
            .cloned()
            .collect();
        if !absent.is_empty() {
            return Err(GatewayError::TemplateUndeclared {
                template_id: t.template_id,
                names: absent,
            });
        }
        Ok(t)
    }

    /// Substitutes every bound placeholder in one pass, so braces inside
    /// bound values are never re-expanded. Extra bindings are ignored.
    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<String, GatewayError> {
        let missing: Vec<String> = self
            .required_placeholders
            .iter()
            .filter(|n| !bindings.contains_key(*n))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(GatewayError::MissingPlaceholders {
                template_id: self.template_id.clone(),
                names: missing,
            });
        }
        let mut out = String::with_capacity(self.body.len());
        let mut last = 0;
        for (start, end, name) in placeholders(&self.body) {
            if let Some(value) = bindings.get(name) {
                out.push_str(&self.body[last..start]);
                out.push_str(value);
                last = end;
            }
        }
        out.push_str(&self.body[last..]);
        Ok(out)
    }
}

/// Free function form of [`PromptTemplate::render`].
pub fn render_template(template: &PromptTemplate, bindings: &BTreeMap<String, String>) -> Result<String, GatewayError> {
    template.render(bindings)
}

/// Templates keyed by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateSet {
    pub fn insert(&mut self, t: PromptTemplate) {
        self.templates.insert(t.template_id.clone(), t);
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, GatewayError> {
        self.templates
            .get(id)
            .ok_or_else(|| GatewayError::UnknownTemplate(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    /// Replaces bodies with `<dir>/<template_id>.txt` where such a file exists.
    /// The replacement must still contain every required placeholder.
    pub fn override_from_dir(&mut self, dir: impl AsRef<Path>) -> Result<usize, GatewayError> {
        let dir = dir.as_ref();
        let mut replaced = 0;
        for t in self.templates.values_mut() {
            let path = dir.join(format!("{}.txt", t.template_id));
            if !path.exists() {
                continue;
            }
            let body = std::fs::read_to_string(&path)
                .map_err(|e| GatewayError::Io(format!("{}: {e}", path.display())))?;
            *t = PromptTemplate::new(t.template_id.clone(), body, t.required_placeholders.clone())?;
            replaced += 1;
        }
        Ok(replaced)
    }

    /// Writes every template body to `<dir>/<template_id>.txt`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), GatewayError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| GatewayError::Io(format!("{}: {e}", dir.display())))?;
        for t in self.templates.values() {
            let path = dir.join(format!("{}.txt", t.template_id));
            std::fs::write(&path, &t.body).map_err(|e| GatewayError::Io(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn hello_world() {
        let t = PromptTemplate::new("t", "Hello {X}", ["X"]).unwrap();
        assert_eq!(t.render(&b(&[("X", "world"), ("unused", "1")])).unwrap(), "Hello world");
    }

    #[test]
    fn missing_binding_is_named() {
        let t = PromptTemplate::new("t", "{Meta-data} and {Summary}", ["Meta-data", "Summary"]).unwrap();
        match t.render(&b(&[("Summary", "s")])) {
            Err(GatewayError::MissingPlaceholders { names, .. }) => assert_eq!(names, vec!["Meta-data"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bound_values_are_not_reexpanded() {
        let t = PromptTemplate::new("t", "graph: {DAG.json} / {Clinician comment}", ["DAG.json", "Clinician comment"]).unwrap();
        let out = t
            .render(&b(&[("DAG.json", r#"{"nodes":["{Clinician comment}"]}"#), ("Clinician comment", "")]))
            .unwrap();
        assert_eq!(out, r#"graph: {"nodes":["{Clinician comment}"]} / "#);
    }

    #[test]
    fn json_braces_in_body_are_left_alone() {
        let t = PromptTemplate::new("t", r#"Reply as {"edges": [["a","b"]]} for {X}"#, ["X"]).unwrap();
        assert_eq!(t.render(&b(&[("X", "x")])).unwrap(), r#"Reply as {"edges": [["a","b"]]} for x"#);
    }

    #[test]
    fn undeclared_required_placeholder() {
        assert!(matches!(
            PromptTemplate::new("t", "no slots", ["X"]),
            Err(GatewayError::TemplateUndeclared { .. })
        ));
    }
}
