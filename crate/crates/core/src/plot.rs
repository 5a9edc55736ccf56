//! SVG line plots rendered from the CSVs this crate writes. The CSV kind is
//! recognised from its header.

use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsvKind {
    Trace,
    Ber,
    Sweep,
    Training,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotData {
    pub kind: CsvKind,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn detect(header: &csv::StringRecord) -> Result<CsvKind> {
    match header.get(0) {
        Some("iteration") => Ok(CsvKind::Trace),
        Some("mode") => Ok(CsvKind::Ber),
        Some("size") => Ok(CsvKind::Sweep),
        Some("epoch") => Ok(CsvKind::Training),
        other => Err(Error::invalid(format!("unrecognised csv header starting with {other:?}"))),
    }
}

fn column(header: &csv::StringRecord, name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::invalid(format!("csv lacks column {name:?}")))
}

fn num(record: &csv::StringRecord, idx: usize) -> Result<f64> {
    let field = record.get(idx).unwrap_or_default();
    field
        .parse()
        .map_err(|_| Error::invalid(format!("non-numeric csv field {field:?}")))
}

fn columns_vs(
    header: &csv::StringRecord,
    records: &[csv::StringRecord],
    x: &str,
    ys: &[&str],
) -> Result<Vec<Series>> {
    let xi = column(header, x)?;
    ys.iter()
        .map(|&y| {
            let yi = column(header, y)?;
            let points = records
                .iter()
                .map(|r| Ok((num(r, xi)?, num(r, yi)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(Series {
                label: y.to_string(),
                points,
            })
        })
        .collect()
}

/// Parse a CSV into the series that would be drawn.
pub fn plot_data(csv_text: &str) -> Result<PlotData> {
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let header = reader.headers()?.clone();
    if header.is_empty() {
        return Err(Error::invalid("empty csv"));
    }
    let kind = detect(&header)?;
    let records = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;
    if records.is_empty() {
        return Err(Error::invalid("csv has no rows"));
    }
    let (title, x_label, y_label, series) = match kind {
        CsvKind::Trace => (
            "loss per iteration",
            "iteration",
            "loss",
            columns_vs(&header, &records, "iteration", &["contextual", "perceptual", "message", "total", "best_total"])?,
        ),
        CsvKind::Training => (
            "adversarial training",
            "epoch",
            "value",
            columns_vs(
                &header,
                &records,
                "epoch",
                &["discriminator_loss", "generator_loss", "discriminator_accuracy"],
            )?,
        ),
        CsvKind::Sweep => ("grille size sweep", "grille size", "value", {
            let mut s = columns_vs(&header, &records, "size", &["ber"])?;
            let (pi, oi, si) = (column(&header, "popcount")?, column(&header, "overlap_kept")?, column(&header, "size")?);
            let overlap = records
                .iter()
                .map(|r| {
                    let pop = num(r, pi)?;
                    Ok((num(r, si)?, if pop > 0.0 { num(r, oi)? / pop } else { 0.0 }))
                })
                .collect::<Result<Vec<_>>>()?;
            s.push(Series {
                label: "overlap fraction".into(),
                points: overlap,
            });
            s
        }),
        CsvKind::Ber => {
            let (si, bi, mi) = (column(&header, "si")?, column(&header, "budget")?, column(&header, "mean_ber")?);
            let mut by_si: BTreeMap<u8, Vec<(f64, f64)>> = BTreeMap::new();
            for r in &records {
                let s: u8 = r
                    .get(si)
                    .unwrap_or_default()
                    .parse()
                    .map_err(|_| Error::invalid("bad si column"))?;
                by_si.entry(s).or_default().push((num(r, bi)?, num(r, mi)?));
            }
            let series = by_si
                .into_iter()
                .map(|(s, mut points)| {
                    points.sort_by(|a, b| a.0.total_cmp(&b.0));
                    Series {
                        label: format!("si={s}"),
                        points,
                    }
                })
                .collect();
            ("bit error rate", "iteration budget", "mean BER", series)
        }
    };
    Ok(PlotData {
        kind,
        title: title.into(),
        x_label: x_label.into(),
        y_label: y_label.into(),
        series,
    })
}

fn padded_range(values: impl Iterator<Item = f64>) -> std::ops::Range<f64> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let span = (hi - lo).abs().max(1e-9);
    (lo - 0.05 * span)..(hi + 0.05 * span)
}

fn draw<DB: DrawingBackend>(root: DrawingArea<DB, plotters::coord::Shift>, data: &PlotData) -> Result<()>
where
    DB::ErrorType: 'static,
{
    let perr = |e: DrawingAreaErrorKind<DB::ErrorType>| Error::Plot(e.to_string());
    root.fill(&WHITE).map_err(perr)?;
    let all = || data.series.iter().flat_map(|s| s.points.iter().copied());
    let mut chart = ChartBuilder::on(&root)
        .caption(&data.title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(padded_range(all().map(|p| p.0)), padded_range(all().map(|p| p.1)))
        .map_err(perr)?;
    chart
        .configure_mesh()
        .x_desc(&data.x_label)
        .y_desc(&data.y_label)
        .draw()
        .map_err(perr)?;
    for (i, s) in data.series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
            .map_err(perr)?
            .label(&s.label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
        chart
            .draw_series(s.points.iter().map(|&p| Circle::new(p, 3, color.filled())))
            .map_err(perr)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(perr)?;
    root.present().map_err(perr)?;
    Ok(())
}

/// Render a CSV to an SVG document.
pub fn render_svg(csv_text: &str) -> Result<(PlotData, String)> {
    let data = plot_data(csv_text)?;
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (800, 500)).into_drawing_area();
        draw(root, &data)?;
    }
    Ok((data, svg))
}

pub fn render_file(csv_path: &Path, svg_path: &Path) -> Result<PlotData> {
    let (data, svg) = render_svg(&std::fs::read_to_string(csv_path)?)?;
    std::fs::write(svg_path, svg)?;
    Ok(data)
}
