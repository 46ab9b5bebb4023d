//! Static SVG figures. Every figure is written next to a CSV holding exactly
//! the plotted values.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{CliError, Result};

const SIZE: (u32, u32) = (720, 540);
const PALETTE: [RGBColor; 8] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
    RGBColor(127, 127, 127),
];

pub fn color(i: usize) -> RGBColor {
    PALETTE[i % PALETTE.len()]
}

fn plot_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Evaluation(format!("cannot draw {}: {e}", path.display()))
}

/// Padded axis range covering `values`.
fn span(values: impl IntoIterator<Item = f64>) -> std::ops::Range<f64> {
    let (lo, hi) = values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return 0.0..1.0;
    }
    let pad = if hi > lo { (hi - lo) * 0.08 } else { lo.abs().max(1.0) * 0.1 };
    (lo - pad)..(hi + pad)
}

pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let err = |e: csv::Error| CliError::Evaluation(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    w.flush()
        .map_err(|e| CliError::Evaluation(format!("cannot write {}: {e}", path.display())))
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

#[derive(Clone, Debug)]
pub struct LabeledPoint {
    pub label: String,
    pub diversity: f64,
    pub recognizability: f64,
}

/// Diversity (x) against recognizability (y), one marker per point.
/// Writes `<stem>.svg` and `<stem>.csv`; returns both file names.
pub fn scatter(dir: &Path, stem: &str, title: &str, points: &[LabeledPoint]) -> Result<Vec<String>> {
    let svg = dir.join(format!("{stem}.svg"));
    let csv_path = dir.join(format!("{stem}.csv"));
    write_csv(
        &csv_path,
        &["label", "diversity", "recognizability"],
        points
            .iter()
            .map(|p| vec![p.label.clone(), num(p.diversity), num(p.recognizability)]),
    )?;
    {
        let root = SVGBackend::new(&svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(|e| plot_err(&svg, e))?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(15)
            .x_label_area_size(40)
            .y_label_area_size(55)
            .build_cartesian_2d(
                span(points.iter().map(|p| p.diversity)),
                span(points.iter().map(|p| p.recognizability)),
            )
            .map_err(|e| plot_err(&svg, e))?;
        chart
            .configure_mesh()
            .x_desc("diversity")
            .y_desc("recognizability")
            .draw()
            .map_err(|e| plot_err(&svg, e))?;
        for (i, p) in points.iter().enumerate() {
            let c = color(i);
            chart
                .draw_series(std::iter::once(Circle::new((p.diversity, p.recognizability), 5, c.filled())))
                .map_err(|e| plot_err(&svg, e))?
                .label(p.label.clone())
                .legend(move |(x, y)| Circle::new((x + 8, y), 4, c.filled()));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| plot_err(&svg, e))?;
        root.present().map_err(|e| plot_err(&svg, e))?;
    }
    Ok(vec![format!("{stem}.svg"), format!("{stem}.csv")])
}

/// A metric against the swept parameter: seed mean with a ±1 std band and
/// the smoothed mean.
#[allow(clippy::too_many_arguments)]
pub fn sweep_curve(
    dir: &Path,
    stem: &str,
    parameter: &str,
    metric: &str,
    values: &[f64],
    mean: &[f64],
    std: &[f64],
    smoothed: &[f64],
) -> Result<Vec<String>> {
    let svg = dir.join(format!("{stem}.svg"));
    let csv_path = dir.join(format!("{stem}.csv"));
    write_csv(
        &csv_path,
        &[parameter, "mean", "std", "smoothed"],
        (0..values.len()).map(|i| vec![num(values[i]), num(mean[i]), num(std[i]), num(smoothed[i])]),
    )?;
    {
        let root = SVGBackend::new(&svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(|e| plot_err(&svg, e))?;
        let ys = mean
            .iter()
            .zip(std)
            .flat_map(|(m, s)| [m - s, m + s])
            .chain(smoothed.iter().copied());
        let mut chart = ChartBuilder::on(&root)
            .caption(format!("{metric} vs {parameter}"), ("sans-serif", 20))
            .margin(15)
            .x_label_area_size(40)
            .y_label_area_size(55)
            .build_cartesian_2d(span(values.iter().copied()), span(ys))
            .map_err(|e| plot_err(&svg, e))?;
        chart
            .configure_mesh()
            .x_desc(parameter)
            .y_desc(metric)
            .draw()
            .map_err(|e| plot_err(&svg, e))?;
        let band: Vec<(f64, f64)> = values
            .iter()
            .zip(mean.iter().zip(std))
            .map(|(&x, (m, s))| (x, m + s))
            .chain(values.iter().zip(mean.iter().zip(std)).rev().map(|(&x, (m, s))| (x, m - s)))
            .collect();
        chart
            .draw_series(std::iter::once(Polygon::new(band, color(0).mix(0.2).filled())))
            .map_err(|e| plot_err(&svg, e))?;
        chart
            .draw_series(LineSeries::new(values.iter().copied().zip(mean.iter().copied()), color(0)))
            .map_err(|e| plot_err(&svg, e))?
            .label("mean ± std")
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color(0)));
        chart
            .draw_series(values.iter().zip(mean).map(|(&x, &y)| Circle::new((x, y), 3, color(0).filled())))
            .map_err(|e| plot_err(&svg, e))?;
        chart
            .draw_series(LineSeries::new(
                values.iter().copied().zip(smoothed.iter().copied()),
                color(1).stroke_width(2),
            ))
            .map_err(|e| plot_err(&svg, e))?
            .label("smoothed")
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color(1)));
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| plot_err(&svg, e))?;
        root.present().map_err(|e| plot_err(&svg, e))?;
    }
    Ok(vec![format!("{stem}.svg"), format!("{stem}.csv")])
}

/// Sweep points in the diversity-recognizability plane, labelled by the
/// parameter value, with the fitted parametric curve when available.
pub fn sweep_plane(dir: &Path, stem: &str, parameter: &str, points: &[(f64, f64, f64)], curve: &[(f64, f64)]) -> Result<Vec<String>> {
    let svg = dir.join(format!("{stem}.svg"));
    let csv_path = dir.join(format!("{stem}.csv"));
    write_csv(
        &csv_path,
        &["series", parameter, "diversity", "recognizability"],
        points
            .iter()
            .map(|&(v, d, r)| vec!["mean".into(), num(v), num(d), num(r)])
            .chain(curve.iter().map(|&(d, r)| vec!["fit".into(), String::new(), num(d), num(r)])),
    )?;
    {
        let root = SVGBackend::new(&svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(|e| plot_err(&svg, e))?;
        let mut chart = ChartBuilder::on(&root)
            .caption(format!("diversity vs recognizability over {parameter}"), ("sans-serif", 20))
            .margin(15)
            .x_label_area_size(40)
            .y_label_area_size(55)
            .build_cartesian_2d(
                span(points.iter().map(|p| p.1).chain(curve.iter().map(|c| c.0))),
                span(points.iter().map(|p| p.2).chain(curve.iter().map(|c| c.1))),
            )
            .map_err(|e| plot_err(&svg, e))?;
        chart
            .configure_mesh()
            .x_desc("diversity")
            .y_desc("recognizability")
            .draw()
            .map_err(|e| plot_err(&svg, e))?;
        if !curve.is_empty() {
            chart
                .draw_series(LineSeries::new(curve.iter().copied(), color(0).stroke_width(2)))
                .map_err(|e| plot_err(&svg, e))?;
        }
        chart
            .draw_series(points.iter().map(|&(v, d, r)| {
                EmptyElement::at((d, r))
                    + Circle::new((0, 0), 4, color(1).filled())
                    + Text::new(num(v), (6, -12), ("sans-serif", 12))
            }))
            .map_err(|e| plot_err(&svg, e))?;
        root.present().map_err(|e| plot_err(&svg, e))?;
    }
    Ok(vec![format!("{stem}.svg"), format!("{stem}.csv")])
}

/// One column of per-concept values per group with a median bar.
pub fn strip(dir: &Path, stem: &str, y_label: &str, groups: &[(String, Vec<f64>)]) -> Result<Vec<String>> {
    let svg = dir.join(format!("{stem}.svg"));
    let csv_path = dir.join(format!("{stem}.csv"));
    let medians: Vec<f64> = groups.iter().map(|(_, v)| median(v)).collect();
    write_csv(
        &csv_path,
        &["group", "kind", "value"],
        groups.iter().zip(&medians).flat_map(|((g, v), m)| {
            v.iter()
                .map(|x| vec![g.clone(), "point".into(), num(*x)])
                .chain(std::iter::once(vec![g.clone(), "median".into(), num(*m)]))
                .collect::<Vec<_>>()
        }),
    )?;
    {
        let root = SVGBackend::new(&svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(|e| plot_err(&svg, e))?;
        let n = groups.len().max(1) as f64;
        let labels: Vec<String> = groups.iter().map(|(g, _)| g.clone()).collect();
        let mut chart = ChartBuilder::on(&root)
            .caption(format!("{y_label} per concept"), ("sans-serif", 20))
            .margin(15)
            .x_label_area_size(40)
            .y_label_area_size(55)
            .build_cartesian_2d(-0.5..(n - 0.5), span(groups.iter().flat_map(|(_, v)| v.iter().copied())))
            .map_err(|e| plot_err(&svg, e))?;
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(groups.len().max(1))
            .x_label_formatter(&|x: &f64| {
                let i = x.round();
                if (x - i).abs() < 1e-6 && i >= 0.0 {
                    labels.get(i as usize).cloned().unwrap_or_default()
                } else {
                    String::new()
                }
            })
            .y_desc(y_label)
            .draw()
            .map_err(|e| plot_err(&svg, e))?;
        for (i, ((_, values), m)) in groups.iter().zip(&medians).enumerate() {
            let x = i as f64;
            let count = values.len().max(1) as f64;
            chart
                .draw_series(values.iter().enumerate().map(|(k, &y)| {
                    // Deterministic jitter spreads the column.
                    let dx = (k as f64 / count - 0.5) * 0.5;
                    Circle::new((x + dx, y), 2, color(i).mix(0.6).filled())
                }))
                .map_err(|e| plot_err(&svg, e))?;
            chart
                .draw_series(std::iter::once(PathElement::new(
                    vec![(x - 0.35, *m), (x + 0.35, *m)],
                    BLACK.stroke_width(3),
                )))
                .map_err(|e| plot_err(&svg, e))?;
        }
        root.present().map_err(|e| plot_err(&svg, e))?;
    }
    Ok(vec![format!("{stem}.svg"), format!("{stem}.csv")])
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn scatter_writes_plotted_values() {
        let tmp = tempfile::tempdir().unwrap();
        let pts = vec![LabeledPoint {
            label: "human".into(),
            diversity: 1.5,
            recognizability: 0.75,
        }];
        let files = scatter(tmp.path(), "s", "t", &pts).unwrap();
        assert_eq!(files, vec!["s.svg", "s.csv"]);
        let csv = std::fs::read_to_string(tmp.path().join("s.csv")).unwrap();
        assert_eq!(csv, "label,diversity,recognizability\nhuman,1.5,0.75\n");
        assert!(std::fs::read_to_string(tmp.path().join("s.svg")).unwrap().contains("<svg"));
    }
}
