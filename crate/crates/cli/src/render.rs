use std::fmt::Write;

use vip_core::trajectory::{StopReason, TrajectoryRecord};

/// Text rendering of one trajectory: a line per asked query with its answer
/// (sign marked `+` or `-`) and the full posterior after it.
pub fn render_trace(
    record: &TrajectoryRecord,
    query_text: &dyn Fn(usize) -> String,
    class_names: &[String],
    header: &str,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{header}");
    let width = record
        .steps
        .iter()
        .map(|st| query_text(st.query).len())
        .max()
        .unwrap_or(5)
        .max(5);
    let _ = writeln!(s, "{:>4}  {:<width$}  {:>9}  posterior", "step", "query", "answer");
    for (i, step) in record.steps.iter().enumerate() {
        let probs: Vec<String> = step.posterior.iter().map(|p| format!("{p:.4}")).collect();
        let _ = writeln!(
            s,
            "{:>4}  {:<width$}  {:>+9.4}  [{}]",
            i + 1,
            query_text(step.query),
            step.answer,
            probs.join(", ")
        );
    }
    let reason = match record.stop_reason {
        StopReason::Threshold => "threshold reached",
        StopReason::Budget => "budget exhausted",
    };
    let name = class_names
        .get(record.prediction)
        .cloned()
        .unwrap_or_else(|| format!("class {}", record.prediction));
    let p = record.steps.last().map(|st| st.posterior[record.prediction]);
    match p {
        Some(p) => {
            let _ = writeln!(
                s,
                "prediction: {name} (p = {p:.4}) after {} queries, {reason}",
                record.len()
            );
        }
        None => {
            let _ = writeln!(s, "prediction: {name} from the prior, {reason}");
        }
    }
    s
}
