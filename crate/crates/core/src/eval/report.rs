use super::abbrev::AbbrevReport;
use super::quiz::{QuizArm, QuizReport};

/// `0.7` -> `70%`; fractional percentages keep one decimal.
pub fn format_percent(accuracy: f64) -> String {
    let pct = accuracy * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}%", pct.round() as i64)
    } else {
        format!("{pct:.1}%")
    }
}

fn table(header: &[Vec<String>], body: &[Vec<String>], footer: &[Vec<String>]) -> String {
    let cols = header
        .iter()
        .chain(body)
        .chain(footer)
        .map(Vec::len)
        .max()
        .unwrap_or(0);
    let mut widths = vec![0; cols];
    for row in header.iter().chain(body).chain(footer) {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |row: &Vec<String>| {
        let cells: Vec<String> = (0..cols)
            .map(|i| {
                let cell = row.get(i).map(String::as_str).unwrap_or("");
                if i == 0 {
                    format!("{cell:>w$}", w = widths[0])
                } else {
                    format!("{cell:<w$}", w = widths[i])
                }
            })
            .collect();
        format!("{} | {}", cells[0], cells[1..].join("  ")).trim_end().to_string()
    };
    let rule = format!(
        "{}-+-{}",
        "-".repeat(widths[0]),
        "-".repeat(widths[1..].iter().sum::<usize>() + 2 * widths.len().saturating_sub(2))
    );
    let mut out: Vec<String> = header.iter().map(line).collect();
    out.push(rule.clone());
    out.extend(body.iter().map(line));
    if !footer.is_empty() {
        out.push(rule);
        out.extend(footer.iter().map(line));
    }
    out.join("\n") + "\n"
}

/// Accuracy per abbreviation count, one row per model.
pub fn render_abbrev_table(rows: &[(&str, &AbbrevReport)]) -> String {
    let buckets: Vec<usize> = {
        let mut b: Vec<usize> = rows.iter().flat_map(|(_, r)| r.buckets.iter().map(|x| x.bucket)).collect();
        b.sort_unstable();
        b.dedup();
        b
    };
    let header = vec![
        vec!["Model".to_string(), "No. of Abbrev. in Question".to_string()],
        std::iter::once(String::new())
            .chain(buckets.iter().map(|b| b.to_string()))
            .collect(),
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(label, r)| {
            std::iter::once(label.to_string())
                .chain(
                    buckets
                        .iter()
                        .map(|b| r.accuracy(*b).map(format_percent).unwrap_or_else(|| "-".into())),
                )
                .collect()
        })
        .collect();
    // The spanning caption would widen the first bucket column.
    let mut out = table(&header[1..], &body, &[]);
    let width = out.lines().next().map(|l| l.find('|').unwrap_or(0)).unwrap_or(0);
    out.insert_str(0, &format!("{:>width$}| {}\n", "Model ", header[0][1], width = width));
    out
}

/// Average quiz scores: one row per quiz, one column per (arm, model), and
/// a total row. Column and row order follow first appearance in `reports`.
pub fn render_quiz_table(reports: &[QuizReport]) -> String {
    let mut columns: Vec<(QuizArm, String)> = Vec::new();
    let mut quizzes: Vec<(String, usize)> = Vec::new();
    for r in reports {
        if !columns.iter().any(|(a, m)| *a == r.arm && *m == r.model) {
            columns.push((r.arm, r.model.clone()));
        }
        if !quizzes.iter().any(|(q, _)| *q == r.quiz) {
            quizzes.push((r.quiz.clone(), r.question_count));
        }
    }
    let header = vec![
        std::iter::once(String::new())
            .chain(columns.iter().map(|(a, _)| a.display_name().to_string()))
            .collect(),
        std::iter::once(String::new())
            .chain(columns.iter().map(|(_, m)| m.clone()))
            .collect::<Vec<_>>(),
    ];
    let cell = |quiz: &str, col: &(QuizArm, String)| {
        reports
            .iter()
            .find(|r| r.quiz == quiz && r.arm == col.0 && r.model == col.1)
            .map(|r| r.average)
    };
    let body: Vec<Vec<String>> = quizzes
        .iter()
        .map(|(q, n)| {
            std::iter::once(format!("{q} - {n} Q"))
                .chain(
                    columns
                        .iter()
                        .map(|c| cell(q, c).map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".into())),
                )
                .collect()
        })
        .collect();
    let footer = vec![std::iter::once("Total Score".to_string())
        .chain(columns.iter().map(|c| {
            let total: f64 = quizzes.iter().filter_map(|(q, _)| cell(q, c)).sum();
            format!("{total:.1}")
        }))
        .collect()];
    table(&header, &body, &footer)
}
