use super::QAExample;

/// Instruction line that opens every answer prompt.
pub const ANSWER_INSTRUCTION: &str = "Please answer the question according to the context.";

/// Few-shot answer prompt: the instruction, one block per exemplar, then the
/// target block ending in `Answer:`.
pub fn build_answer_prompt(target: &QAExample, exemplars: &[QAExample]) -> String {
    let mut s = String::with_capacity(128 * (exemplars.len() + 1));
    s.push_str(ANSWER_INSTRUCTION);
    s.push('\n');
    for ex in exemplars {
        s.push_str("Context: ");
        s.push_str(&ex.caption);
        s.push_str("\nQuestion: ");
        s.push_str(&ex.question);
        s.push_str("\nAnswer: ");
        s.push_str(ex.primary_answer());
        s.push_str("\n\n");
    }
    s.push_str("Context: ");
    s.push_str(&target.caption);
    s.push_str("\nQuestion: ");
    s.push_str(&target.question);
    s.push_str("\nAnswer:");
    s
}

/// Evidence prompt `<question>? <answer>. This is because`.
pub fn build_evidence_prompt(question: &str, answer: &str) -> String {
    let q = question.trim_end().trim_end_matches('?').trim_end();
    format!("{q}? {answer}. This is because")
}
