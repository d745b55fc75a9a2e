// SPDX-License-Identifier: Apache-2.0

//! Text table over flow reports: baseline and protected layout side by side.

use tromux::flow::FlowReport;

fn thousands(v: usize) -> String {
    let s = v.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn pct(v: f64) -> String {
    format!("{:.1}%", v * 100.0)
}

fn ns(v: f64) -> String {
    // Avoid printing "-0.000".
    let v = if v.abs() < 5e-4 { 0.0 } else { v };
    format!("{v:.3}")
}

const HEADER: [&str; 14] = [
    "Variant", "Design", "|", "Utils", "#(Open)", "TU", "WNS", "TNS", "|", "Utils", "#(Open)",
    "Δ(Open)", "TU", "WNS",
];

pub fn render(reports: &[FlowReport]) -> String {
    let mut header: Vec<String> = HEADER.iter().map(|s| s.to_string()).collect();
    header.push("TNS".into());
    header.push("KL".into());
    let mut rows = vec![header];
    for r in reports {
        let (b, f) = (&r.baseline, &r.final_layout);
        rows.push(vec![
            format!("{}{}", r.variant, if r.balanced { "+bal" } else { "" }),
            r.design.clone(),
            "|".into(),
            pct(b.utilization),
            thousands(b.open_sites),
            pct(b.track_utilization),
            ns(b.wns),
            ns(b.tns),
            "|".into(),
            pct(f.utilization),
            thousands(f.open_sites),
            pct(r.delta_open),
            pct(f.track_utilization),
            ns(f.wns),
            ns(f.tns),
            thousands(r.key_length),
        ]);
    }
    let cols = rows[0].len();
    let width: Vec<usize> = (0..cols)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let left = " ".repeat(width[0] + width[1] + 2);
    let base = "Baseline";
    let span = width[3..8].iter().sum::<usize>() + 4;
    out.push_str(&format!("{left}| {base:<span$} | Protected\n"));
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                let pad = width[c] - cell.chars().count();
                if c < 2 {
                    format!("{cell}{}", " ".repeat(pad))
                } else {
                    format!("{}{cell}", " ".repeat(pad))
                }
            })
            .collect();
        out.push_str(line.join(" ").trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_formats() {
        assert_eq!(thousands(0), "0");
        assert_eq!(thousands(999), "999");
        assert_eq!(thousands(1199), "1,199");
        assert_eq!(thousands(1234567), "1,234,567");
        assert_eq!(pct(-0.845), "-84.5%");
        assert_eq!(ns(-0.0001), "0.000");
        assert_eq!(ns(-0.013), "-0.013");
    }
}
