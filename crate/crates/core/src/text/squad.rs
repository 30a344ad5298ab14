//! SQuAD v1.1 JSON parsing with path-tracking errors.

use serde_json::Value;

use super::TextError;

#[derive(Debug, Clone, PartialEq)]
pub struct SquadAnswer {
    pub text: String,
    /// Character (code point) offset of the answer inside the context.
    pub answer_start: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SquadExample {
    pub qas_id: String,
    pub question: String,
    pub context: String,
    pub answers: Vec<SquadAnswer>,
}

impl SquadExample {
    /// Whether `answer` really occurs at its claimed offset in the context.
    pub fn answer_is_consistent(&self, answer: &SquadAnswer) -> bool {
        let span: String = self
            .context
            .chars()
            .skip(answer.answer_start)
            .take(answer.text.chars().count())
            .collect();
        span == answer.text
    }

    /// Training uses the first gold answer; an example whose first answer
    /// does not match its claimed offset is unusable as supervision.
    pub fn training_usable(&self) -> bool {
        self.answers
            .first()
            .is_some_and(|a| self.answer_is_consistent(a))
    }
}

fn malformed(path: &str, reason: impl Into<String>) -> TextError {
    TextError::Malformed {
        path: path.to_string(),
        reason: reason.into(),
    }
}

fn get<'a>(v: &'a Value, key: &str, path: &str) -> Result<&'a Value, TextError> {
    v.get(key)
        .ok_or_else(|| malformed(path, format!("missing key '{key}'")))
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, TextError> {
    v.as_array()
        .ok_or_else(|| malformed(path, "expected an array"))
}

fn as_str<'a>(v: &'a Value, path: &str) -> Result<&'a str, TextError> {
    v.as_str()
        .ok_or_else(|| malformed(path, "expected a string"))
}

/// Parse a SQuAD v1.1 document (`data -> paragraphs -> qas -> answers`)
/// into one example per qa entry, preserving order.
pub fn load_squad(json: &str) -> Result<Vec<SquadExample>, TextError> {
    let doc: Value = serde_json::from_str(json)?;
    load_squad_value(&doc)
}

/// Same as [`load_squad`] for an already-parsed JSON value.
pub fn load_squad_value(doc: &Value) -> Result<Vec<SquadExample>, TextError> {
    let mut examples = Vec::new();
    let data = as_array(get(doc, "data", "$")?, "$.data")?;
    for (ai, article) in data.iter().enumerate() {
        let apath = format!("data[{ai}]");
        let paragraphs = as_array(
            get(article, "paragraphs", &apath)?,
            &format!("{apath}.paragraphs"),
        )?;
        for (pi, paragraph) in paragraphs.iter().enumerate() {
            let ppath = format!("{apath}.paragraphs[{pi}]");
            let context = as_str(get(paragraph, "context", &ppath)?, &format!("{ppath}.context"))?;
            let qas = as_array(get(paragraph, "qas", &ppath)?, &format!("{ppath}.qas"))?;
            for (qi, qa) in qas.iter().enumerate() {
                let qpath = format!("{ppath}.qas[{qi}]");
                let qas_id = as_str(get(qa, "id", &qpath)?, &format!("{qpath}.id"))?;
                let question =
                    as_str(get(qa, "question", &qpath)?, &format!("{qpath}.question"))?;
                let answers_json =
                    as_array(get(qa, "answers", &qpath)?, &format!("{qpath}.answers"))?;
                let mut answers = Vec::with_capacity(answers_json.len());
                for (ans_idx, ans) in answers_json.iter().enumerate() {
                    let anspath = format!("{qpath}.answers[{ans_idx}]");
                    let text = as_str(get(ans, "text", &anspath)?, &format!("{anspath}.text"))?;
                    let start_value = get(ans, "answer_start", &anspath)?;
                    let answer_start = start_value.as_u64().ok_or_else(|| {
                        malformed(
                            &format!("{anspath}.answer_start"),
                            "expected a non-negative integer",
                        )
                    })? as usize;
                    answers.push(SquadAnswer {
                        text: text.to_string(),
                        answer_start,
                    });
                }
                examples.push(SquadExample {
                    qas_id: qas_id.to_string(),
                    question: question.to_string(),
                    context: context.to_string(),
                    answers,
                });
            }
        }
    }
    Ok(examples)
}
