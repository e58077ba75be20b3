//! Minimal grouped-bar SVG charts.

use std::fmt::Write;

/// Bars grouped by `groups`, one bar per series. `None` values are drawn as
/// an outlined "n/a" placeholder instead of a zero-height bar.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupedBars {
    pub title: String,
    pub y_label: String,
    pub groups: Vec<String>,
    pub series: Vec<String>,
    /// `values[series][group]`
    pub values: Vec<Vec<Option<f64>>>,
}

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

impl GroupedBars {
    pub fn y_max(&self) -> f64 {
        let m = self.values.iter().flatten().flatten().fold(0.0f64, |a, &b| a.max(b));
        if m <= 1.0 {
            1.0
        } else {
            m * 1.1
        }
    }

    pub fn to_svg(&self) -> String {
        let (bar_w, gap, left, top, plot_h) = (22.0, 26.0, 60.0, 40.0, 220.0);
        let group_w = bar_w * self.series.len().max(1) as f64 + gap;
        let width = left + group_w * self.groups.len().max(1) as f64 + 150.0;
        let height = top + plot_h + 70.0;
        let y_max = self.y_max();
        let y = |v: f64| top + plot_h * (1.0 - v / y_max);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{left}" y="20" font-size="14">{}</text>"#,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.1}" stroke="#333"/>"##,
            top + plot_h
        );
        for i in 0..=4 {
            let v = y_max * i as f64 / 4.0;
            let _ = writeln!(
                s,
                r##"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text><line x1="{left}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#ddd"/>"##,
                left - 4.0,
                y(v) + 4.0,
                y(v),
                width - 150.0,
                y(v)
            );
        }
        let _ = writeln!(
            s,
            r#"<text transform="translate(14,{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
            top + plot_h / 2.0,
            escape(&self.y_label)
        );
        for (g, group) in self.groups.iter().enumerate() {
            let gx = left + gap / 2.0 + g as f64 * group_w;
            for (k, row) in self.values.iter().enumerate() {
                let x = gx + k as f64 * bar_w;
                let color = PALETTE[k % PALETTE.len()];
                match row.get(g).copied().flatten() {
                    Some(v) => {
                        let _ = writeln!(
                            s,
                            r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{color}"><title>{}: {v:.4}</title></rect>"#,
                            y(v),
                            bar_w - 2.0,
                            top + plot_h - y(v),
                            escape(&self.series[k])
                        );
                    }
                    None => {
                        let _ = writeln!(
                            s,
                            r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="18" fill="none" stroke="{color}" stroke-dasharray="3,2"/><text x="{:.1}" y="{:.1}" font-size="8" text-anchor="middle">n/a</text>"#,
                            top + plot_h - 18.0,
                            bar_w - 2.0,
                            x + bar_w / 2.0 - 1.0,
                            top + plot_h - 6.0
                        );
                    }
                }
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                gx + bar_w * self.series.len() as f64 / 2.0,
                top + plot_h + 16.0,
                escape(group)
            );
        }
        let lx = width - 140.0;
        for (k, name) in self.series.iter().enumerate() {
            let ly = top + 14.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{lx:.1}" y="{ly:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                PALETTE[k % PALETTE.len()],
                lx + 14.0,
                ly + 9.0,
                escape(name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}
