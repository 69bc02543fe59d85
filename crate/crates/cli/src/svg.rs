//! Minimal self-contained SVG bar charts.

use std::fmt::Write;

const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1"];
const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 80.0;

pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

pub struct BarChart {
    pub title: String,
    pub y_label: String,
    pub categories: Vec<String>,
    pub series: Vec<Series>,
    /// Plot log10 of the values; non-positive values are drawn at the floor.
    pub log_y: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl BarChart {
    fn transform(&self, v: f64, floor: f64) -> f64 {
        if self.log_y {
            v.max(floor).log10()
        } else {
            v
        }
    }

    fn range(&self) -> (f64, f64, f64) {
        let values = self.series.iter().flat_map(|s| s.values.iter().copied());
        if self.log_y {
            let positive: Vec<f64> = values.filter(|v| *v > 0.0).collect();
            let lo = positive.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = positive.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if positive.is_empty() {
                return (0.0, 1.0, 1.0);
            }
            let floor = 10f64.powf(lo.log10().floor());
            (floor.log10(), hi.log10().ceil().max(floor.log10() + 1.0), floor)
        } else {
            let hi = values.fold(0.0, f64::max);
            (0.0, if hi > 0.0 { hi * 1.1 } else { 1.0 }, 0.0)
        }
    }

    pub fn to_svg(&self) -> String {
        let (y0, y1, floor) = self.range();
        let plot_w = WIDTH - LEFT - RIGHT;
        let plot_h = HEIGHT - TOP - BOTTOM;
        let y_of = |v: f64| TOP + plot_h * (1.0 - (v - y0) / (y1 - y0));
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );

        for i in 0..=4 {
            let v = y0 + (y1 - y0) * i as f64 / 4.0;
            let y = y_of(v);
            let label = if self.log_y { format!("1e{v:.0}") } else { format!("{v:.3}") };
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{label}</text>"##,
                WIDTH - RIGHT,
                LEFT - 6.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">{}</text>"#,
            TOP + plot_h / 2.0,
            TOP + plot_h / 2.0,
            escape(&self.y_label)
        );

        let groups = self.categories.len().max(1) as f64;
        let group_w = plot_w / groups;
        let bar_w = group_w * 0.8 / self.series.len().max(1) as f64;
        for (c, category) in self.categories.iter().enumerate() {
            let gx = LEFT + group_w * c as f64 + group_w * 0.1;
            for (k, series) in self.series.iter().enumerate() {
                let Some(&v) = series.values.get(c) else { continue };
                let top = y_of(self.transform(v, floor).clamp(y0, y1));
                let base = y_of(y0);
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="{}"><title>{}: {v}</title></rect>"#,
                    gx + bar_w * k as f64,
                    bar_w.max(1.0),
                    (base - top).max(0.0),
                    PALETTE[k % PALETTE.len()],
                    escape(&series.name)
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                gx + group_w * 0.4,
                TOP + plot_h + 18.0,
                escape(category)
            );
        }
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#333"/>"##,
            TOP + plot_h,
            WIDTH - RIGHT,
            TOP + plot_h
        );

        for (k, series) in self.series.iter().enumerate() {
            let x = LEFT + 150.0 * k as f64;
            let y = HEIGHT - 24.0;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{y:.1}">{}</text>"#,
                y - 10.0,
                PALETTE[k % PALETTE.len()],
                x + 16.0,
                escape(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_rect_per_value_plus_legend() {
        let chart = BarChart {
            title: "a < b".into(),
            y_label: "count".into(),
            categories: vec!["0".into(), "1".into(), "2".into()],
            series: vec![Series {
                name: "entities".into(),
                values: vec![3.0, 0.0, 5.0],
            }],
            log_y: false,
        };
        let svg = chart.to_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("a &lt; b"));
        // background + 3 bars + 1 legend swatch
        assert_eq!(svg.matches("<rect").count(), 5);
    }

    #[test]
    fn log_scale_handles_tiny_values() {
        let chart = BarChart {
            title: "t".into(),
            y_label: "p".into(),
            categories: vec!["A1".into()],
            series: vec![
                Series {
                    name: "before".into(),
                    values: vec![1e-7],
                },
                Series {
                    name: "after".into(),
                    values: vec![0.9],
                },
            ],
            log_y: true,
        };
        let svg = chart.to_svg();
        assert!(svg.contains("1e-7"));
        assert!(!svg.contains("NaN"));
    }
}
