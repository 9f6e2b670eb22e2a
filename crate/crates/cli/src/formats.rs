//! On-disk formats: a JSON metadata line followed by CSV rows for binned
//! data and queries, JSON documents for polytopes and fitted models.

use std::io::{BufRead, Write};

use binned_gp::gp::{heteroscedastic_noise, BinnedDataset, ObservationKind};
use binned_gp::polytope::{Polytope, Simplex};
use binned_gp::{FitResult, Hyperrectangle, Interval, LatentPoint, Support};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    Homoscedastic,
    /// Per-row noise from the bin count column.
    Counts,
}

/// The metadata line of a bin file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinHeader {
    pub dims: usize,
    pub kind: ObservationKind,
    pub noise: NoiseModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinRow {
    pub bounds: Vec<(f64, f64)>,
    pub y: f64,
    pub count: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinFile {
    pub header: BinHeader,
    pub rows: Vec<BinRow>,
}

fn data_err(line: u64, msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("line {line}: {msg}"))
}

/// Reads the metadata line, returning it with its 1-based line number.
/// Blank leading lines are skipped; an input with no content is a usage error.
fn read_meta<R: BufRead>(reader: &mut R, what: &str) -> Result<(String, u64), CliError> {
    let mut line = String::new();
    let mut n = 0;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(CliError::Usage(format!("{what} is empty")));
        }
        n += 1;
        if !line.trim().is_empty() {
            return Ok((line.trim().to_string(), n));
        }
    }
}

fn bound_names(dims: usize) -> Vec<String> {
    (1..=dims).flat_map(|k| [format!("s{k}"), format!("t{k}")]).collect()
}

fn point_names(dims: usize) -> Vec<String> {
    (1..=dims).map(|k| format!("x{k}")).collect()
}

fn parse_field(record: &csv::StringRecord, i: usize, line: u64, name: &str) -> Result<f64, CliError> {
    let raw = record.get(i).ok_or_else(|| data_err(line, format!("missing column '{name}'")))?;
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| data_err(line, format!("column '{name}': '{raw}' is not a number")))?;
    if v.is_nan() {
        return Err(data_err(line, format!("column '{name}' is NaN")));
    }
    Ok(v)
}

fn csv_reader<R: BufRead>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader)
}

/// Header row check. `offset` is the number of lines consumed before the
/// CSV part, so reported line numbers match the file.
fn check_columns(got: &csv::StringRecord, want: &[String], offset: u64) -> Result<(), CliError> {
    let names: Vec<&str> = got.iter().map(str::trim).collect();
    if names.len() < want.len() || names.iter().zip(want).any(|(a, b)| a != b) {
        return Err(data_err(
            offset + 1,
            format!("expected columns {}, found {}", want.join(","), names.join(",")),
        ));
    }
    Ok(())
}

impl BinFile {
    pub fn read<R: BufRead>(mut reader: R) -> Result<Self, CliError> {
        let (meta, offset) = read_meta(&mut reader, "bin file")?;
        let header: BinHeader =
            serde_json::from_str(&meta).map_err(|e| data_err(offset, format!("bad metadata line: {e}")))?;
        if header.dims == 0 {
            return Err(data_err(offset, "dims must be at least 1"));
        }
        let d = header.dims;
        let mut want = bound_names(d);
        want.push("y".into());
        let mut rdr = csv_reader(reader);
        let cols = rdr
            .headers()
            .map_err(|e| data_err(offset + 1, e))?
            .clone();
        check_columns(&cols, &want, offset)?;
        let has_count = cols.get(2 * d + 1).map(str::trim) == Some("n");
        if header.noise == NoiseModel::Counts && !has_count {
            return Err(data_err(offset + 1, "noise model 'counts' needs an 'n' column"));
        }
        let width = 2 * d + 1 + usize::from(has_count);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| CliError::Data(e.to_string()))?;
            let line = offset + rec.position().map_or(0, |p| p.line());
            if rec.len() == 1 && rec.get(0).is_some_and(|f| f.trim().is_empty()) {
                continue;
            }
            if rec.len() != width {
                return Err(data_err(line, format!("expected {width} fields, found {}", rec.len())));
            }
            let mut bounds = Vec::with_capacity(d);
            for k in 0..d {
                let s = parse_field(&rec, 2 * k, line, &want[2 * k])?;
                let t = parse_field(&rec, 2 * k + 1, line, &want[2 * k + 1])?;
                if t < s {
                    return Err(data_err(line, format!("upper bound {t} below lower bound {s} in dimension {}", k + 1)));
                }
                bounds.push((s, t));
            }
            let y = parse_field(&rec, 2 * d, line, "y")?;
            let count = if has_count { Some(parse_field(&rec, 2 * d + 1, line, "n")?) } else { None };
            rows.push(BinRow { bounds, y, count });
        }
        if rows.is_empty() {
            return Err(CliError::Usage("bin file has no data rows".into()));
        }
        Ok(BinFile { header, rows })
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), CliError> {
        writeln!(out, "{}", serde_json::to_string(&self.header)?)?;
        let has_count = self.rows.iter().any(|r| r.count.is_some());
        let mut names = bound_names(self.header.dims);
        names.push("y".into());
        if has_count {
            names.push("n".into());
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&names).map_err(csv_io)?;
        for r in &self.rows {
            let mut rec: Vec<String> = r.bounds.iter().flat_map(|(s, t)| [s.to_string(), t.to_string()]).collect();
            rec.push(r.y.to_string());
            if has_count {
                rec.push(r.count.map_or(String::new(), |c| c.to_string()));
            }
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn from_dataset(data: &BinnedDataset, kind: ObservationKind) -> Result<Self, CliError> {
        let rows = data
            .supports()
            .iter()
            .zip(data.y())
            .map(|(s, &y)| match s {
                Support::Region(r) => Ok(BinRow {
                    bounds: r.intervals.iter().map(|i| (i.s, i.t)).collect(),
                    y,
                    count: None,
                }),
                _ => Err(CliError::Data("only rectangular bins can be written to a bin file".into())),
            })
            .collect::<Result<_, _>>()?;
        Ok(BinFile {
            header: BinHeader {
                dims: data.dims(),
                kind,
                noise: NoiseModel::Homoscedastic,
            },
            rows,
        })
    }

    pub fn to_dataset(&self) -> Result<BinnedDataset, CliError> {
        let regions = self
            .rows
            .iter()
            .map(|r| Hyperrectangle::from_bounds(&r.bounds))
            .collect::<Result<Vec<_>, _>>()?;
        let y = self.rows.iter().map(|r| r.y).collect();
        let data = BinnedDataset::from_regions(regions, y)?;
        match self.header.noise {
            NoiseModel::Homoscedastic => Ok(data),
            NoiseModel::Counts => {
                let counts: Vec<f64> = self.rows.iter().map(|r| r.count.unwrap_or(f64::NAN)).collect();
                Ok(heteroscedastic_noise(&data, &counts, self.header.kind)?)
            }
        }
    }
}

fn csv_io(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}

/// One observed region: a union of simplexes, each `d + 1` vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopeRegion {
    pub simplexes: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopeFile {
    pub dims: usize,
    pub regions: Vec<PolytopeRegion>,
}

impl PolytopeFile {
    pub fn read<R: BufRead>(mut reader: R) -> Result<Self, CliError> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        if text.trim().is_empty() {
            return Err(CliError::Usage("polytope file is empty".into()));
        }
        let file: PolytopeFile = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("line {}: {e}", e.line())))?;
        if file.regions.is_empty() {
            return Err(CliError::Usage("polytope file has no regions".into()));
        }
        for (i, r) in file.regions.iter().enumerate() {
            if r.simplexes.is_empty() {
                return Err(CliError::Data(format!("region {i} has no simplexes")));
            }
            for s in &r.simplexes {
                if s.len() != file.dims + 1 || s.iter().any(|v| v.len() != file.dims) {
                    return Err(CliError::Data(format!(
                        "region {i}: every simplex needs {} vertices of dimension {}",
                        file.dims + 1,
                        file.dims
                    )));
                }
            }
        }
        Ok(file)
    }

    pub fn write<W: Write>(&self, out: W) -> Result<(), CliError> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    pub fn from_polytopes(polys: &[Polytope], y: Option<&[f64]>) -> Self {
        let dims = polys.first().map_or(0, |p| p.simplexes()[0].dims());
        PolytopeFile {
            dims,
            regions: polys
                .iter()
                .enumerate()
                .map(|(i, p)| PolytopeRegion {
                    simplexes: p.simplexes().iter().map(|s| s.vertices.clone()).collect(),
                    y: y.map(|y| y[i]),
                })
                .collect(),
        }
    }

    pub fn polytopes(&self) -> Result<Vec<Polytope>, CliError> {
        self.regions
            .iter()
            .map(|r| {
                let simplexes = r
                    .simplexes
                    .iter()
                    .map(|v| Simplex::new(v.clone()))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Polytope::new(simplexes)?)
            })
            .collect()
    }

    pub fn observations(&self) -> Result<Vec<f64>, CliError> {
        self.regions
            .iter()
            .enumerate()
            .map(|(i, r)| r.y.ok_or_else(|| CliError::Data(format!("region {i} has no observed y"))))
            .collect()
    }
}

/// Prediction targets read from a query CSV: latent points (`x1..xd`) or
/// boxes (`s1,t1,..,sd,td`), chosen by the header.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryTable {
    Points(Vec<LatentPoint>),
    Regions(Vec<Hyperrectangle>),
}

impl QueryTable {
    pub fn read<R: BufRead>(reader: R) -> Result<Self, CliError> {
        let mut rdr = csv_reader(reader);
        let cols: Vec<String> = rdr
            .headers()
            .map_err(|e| data_err(1, e))?
            .iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if cols.is_empty() {
            return Err(CliError::Usage("query file is empty".into()));
        }
        let points = cols[0] == "x1";
        let d = if points { cols.len() } else { cols.len() / 2 };
        let want = if points { point_names(d) } else { bound_names(d) };
        if d == 0 || cols != want {
            return Err(data_err(1, format!("query columns must be x1..xd or s1,t1..sd,td, found {}", cols.join(","))));
        }
        let mut pts = Vec::new();
        let mut boxes = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| CliError::Data(e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != want.len() {
                return Err(data_err(line, format!("expected {} fields, found {}", want.len(), rec.len())));
            }
            let v = (0..want.len())
                .map(|i| parse_field(&rec, i, line, &want[i]))
                .collect::<Result<Vec<_>, _>>()?;
            if points {
                pts.push(LatentPoint::new(v));
            } else {
                let intervals = v
                    .chunks(2)
                    .map(|c| Interval::new(c[0], c[1]).map_err(|e| data_err(line, e)))
                    .collect::<Result<Vec<_>, _>>()?;
                boxes.push(Hyperrectangle::new(intervals));
            }
        }
        let table = if points { QueryTable::Points(pts) } else { QueryTable::Regions(boxes) };
        if table.is_empty() {
            return Err(CliError::Usage("query file has no rows".into()));
        }
        Ok(table)
    }

    pub fn len(&self) -> usize {
        match self {
            QueryTable::Points(p) => p.len(),
            QueryTable::Regions(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> usize {
        match self {
            QueryTable::Points(p) => p.first().map_or(0, LatentPoint::dims),
            QueryTable::Regions(r) => r.first().map_or(0, Hyperrectangle::dims),
        }
    }

    pub fn supports(&self) -> Vec<Support> {
        match self {
            QueryTable::Points(p) => p.iter().cloned().map(Support::Point).collect(),
            QueryTable::Regions(r) => r.iter().cloned().map(Support::Region).collect(),
        }
    }

    pub fn column_names(&self) -> Vec<String> {
        match self {
            QueryTable::Points(_) => point_names(self.dims()),
            QueryTable::Regions(_) => bound_names(self.dims()),
        }
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        match self {
            QueryTable::Points(p) => p[i].coords.clone(),
            QueryTable::Regions(r) => r[i].intervals.iter().flat_map(|iv| [iv.s, iv.t]).collect(),
        }
    }

    pub fn from_supports(supports: &[Support]) -> Result<Self, CliError> {
        if supports.iter().all(Support::is_point) {
            Ok(QueryTable::Points(supports.iter().map(Support::centroid).collect()))
        } else {
            supports
                .iter()
                .map(|s| match s {
                    Support::Region(r) => Ok(r.clone()),
                    _ => Err(CliError::Data("mixed query kinds cannot be tabulated".into())),
                })
                .collect::<Result<_, _>>()
                .map(QueryTable::Regions)
        }
    }

    pub fn write<W: Write>(&self, out: W) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.column_names()).map_err(csv_io)?;
        for i in 0..self.len() {
            w.write_record(self.row(i).iter().map(f64::to_string)).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// How polytope observations were turned into kernel supports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Approximation {
    Points { per_region: usize, seed: u64 },
    Rectangles { per_region: usize, resolution: usize },
}

/// A fitted model: the optimiser outcome plus everything needed to predict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub fit: FitResult,
    pub kind: ObservationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approximation: Option<Approximation>,
    pub data: BinnedDataset,
}

impl ModelFile {
    pub fn read<R: BufRead>(mut reader: R) -> Result<Self, CliError> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        if text.trim().is_empty() {
            return Err(CliError::Usage("model file is empty".into()));
        }
        let m: ModelFile = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("model file line {}: {e}", e.line())))?;
        m.fit.hyperparameters.validate()?;
        Ok(m)
    }

    pub fn write<W: Write>(&self, out: W) -> Result<(), CliError> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

/// Per-query prediction rows as CSV: query columns, mean, variance, 95%
/// bounds, and the link mean when present.
pub fn write_predictions<W: Write>(
    out: W,
    queries: &[(Vec<String>, Vec<f64>)],
    mean: &[f64],
    variance: &[f64],
    link_mean: Option<&[f64]>,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    let mut names: Vec<String> = queries.first().map(|q| q.0.clone()).unwrap_or_default();
    names.extend(["mean", "variance", "lower", "upper"].map(String::from));
    if link_mean.is_some() {
        names.push("link_mean".into());
    }
    w.write_record(&names).map_err(csv_io)?;
    for (i, (_, cols)) in queries.iter().enumerate() {
        let hw = 1.96 * variance[i].max(0.0).sqrt();
        let mut rec: Vec<String> = cols.iter().map(f64::to_string).collect();
        rec.extend([mean[i], variance[i], mean[i] - hw, mean[i] + hw].map(|v| v.to_string()));
        if let Some(p) = link_mean {
            rec.push(p[i].to_string());
        }
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}
