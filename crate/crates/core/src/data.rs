//! Wide fan-by-time panels and their CSV form.
//!
//! One row per fan: `fan_id, HR_1..HR_T, SL_1..SL_T, steps_1..steps_T,
//! calories_1..calories_T, motion_1..motion_T`. Missing stress entries are
//! empty cells.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimation::SampleMoments;

#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    pub n_points: usize,
    pub fan_ids: Vec<String>,
    pub hr: Vec<Vec<f64>>,
    pub sl: Vec<Vec<Option<f64>>>,
    pub steps: Vec<Vec<f64>>,
    pub calories: Vec<Vec<f64>>,
    pub motion: Vec<Vec<f64>>,
}

impl PanelDataset {
    pub fn empty(n_points: usize) -> Self {
        Self {
            n_points,
            fan_ids: Vec::new(),
            hr: Vec::new(),
            sl: Vec::new(),
            steps: Vec::new(),
            calories: Vec::new(),
            motion: Vec::new(),
        }
    }

    pub fn n_fans(&self) -> usize {
        self.fan_ids.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_fans();
        let t = self.n_points;
        let rows_ok = |rows: usize| rows == n;
        if !(rows_ok(self.hr.len())
            && rows_ok(self.sl.len())
            && rows_ok(self.steps.len())
            && rows_ok(self.calories.len())
            && rows_ok(self.motion.len()))
        {
            return Err(Error::Dimension("panel matrices disagree on the number of fans".into()));
        }
        for i in 0..n {
            if self.hr[i].len() != t
                || self.sl[i].len() != t
                || self.steps[i].len() != t
                || self.calories[i].len() != t
                || self.motion[i].len() != t
            {
                return Err(Error::Dimension(format!("fan {} does not have {t} time points", self.fan_ids[i])));
            }
            if self.hr[i].iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("fan {} has non-finite heart rate", self.fan_ids[i])));
            }
            if self.sl[i].iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("fan {} has non-finite stress level", self.fan_ids[i])));
            }
        }
        Ok(())
    }

    /// Checks the device scale of the stress level.
    pub fn check_stress_range(&self) -> Result<()> {
        for (id, row) in self.fan_ids.iter().zip(&self.sl) {
            if let Some(v) = row.iter().flatten().find(|v| !(0.0..=100.0).contains(*v)) {
                return Err(Error::Data(format!("fan {id}: stress level {v} outside [0, 100]")));
            }
        }
        Ok(())
    }

    pub fn missing_count(&self) -> usize {
        self.sl.iter().flatten().filter(|v| v.is_none()).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        let cells = self.n_fans() * self.n_points;
        if cells == 0 {
            0.0
        } else {
            self.missing_count() as f64 / cells as f64
        }
    }

    pub fn is_complete(&self) -> bool {
        self.missing_count() == 0
    }

    /// Keeps the fans at the given row positions, in that order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let pick = |m: &Vec<Vec<f64>>| rows.iter().map(|&i| m[i].clone()).collect();
        Self {
            n_points: self.n_points,
            fan_ids: rows.iter().map(|&i| self.fan_ids[i].clone()).collect(),
            hr: pick(&self.hr),
            sl: rows.iter().map(|&i| self.sl[i].clone()).collect(),
            steps: pick(&self.steps),
            calories: pick(&self.calories),
            motion: pick(&self.motion),
        }
    }

    /// Observed row `HR_1..HR_T, SL_1..SL_T` of a complete fan.
    pub fn observed_row(&self, i: usize) -> Option<Vec<f64>> {
        let mut row = self.hr[i].clone();
        for v in &self.sl[i] {
            row.push((*v)?);
        }
        Some(row)
    }

    pub fn header(n_points: usize) -> Vec<String> {
        let mut h = vec!["fan_id".to_string()];
        for prefix in ["HR", "SL", "steps", "calories", "motion"] {
            h.extend((1..=n_points).map(|t| format!("{prefix}_{t}")));
        }
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(Self::header(self.n_points))?;
        for i in 0..self.n_fans() {
            let mut rec = Vec::with_capacity(1 + 5 * self.n_points);
            rec.push(self.fan_ids[i].clone());
            rec.extend(self.hr[i].iter().map(|v| v.to_string()));
            rec.extend(self.sl[i].iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            rec.extend(self.steps[i].iter().map(|v| v.to_string()));
            rec.extend(self.calories[i].iter().map(|v| v.to_string()));
            rec.extend(self.motion[i].iter().map(|v| v.to_string()));
            wr.write_record(rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        let cols = header.len();
        if cols < 1 || (cols - 1) % 5 != 0 {
            return Err(Error::Data(format!("panel CSV has {cols} columns; expected 1 + 5T")));
        }
        let t = (cols - 1) / 5;
        let expected = Self::header(t);
        if header.iter().zip(&expected).any(|(a, b)| a != b) {
            return Err(Error::Data("panel CSV header does not match the wide layout".into()));
        }
        let mut panel = Self::empty(t);
        let mut errors = Vec::new();
        for (row_no, rec) in rd.records().enumerate() {
            let rec = rec?;
            let line = row_no + 2;
            let num = |j: usize, errors: &mut Vec<String>| -> f64 {
                rec[j].trim().parse::<f64>().unwrap_or_else(|_| {
                    errors.push(format!("line {line}, column {}: `{}`", expected[j], &rec[j]));
                    f64::NAN
                })
            };
            panel.fan_ids.push(rec[0].to_string());
            panel.hr.push((1..=t).map(|j| num(j, &mut errors)).collect());
            panel.sl.push(
                (t + 1..=2 * t)
                    .map(|j| if rec[j].trim().is_empty() { None } else { Some(num(j, &mut errors)) })
                    .collect(),
            );
            panel.steps.push((2 * t + 1..=3 * t).map(|j| num(j, &mut errors)).collect());
            panel.calories.push((3 * t + 1..=4 * t).map(|j| num(j, &mut errors)).collect());
            panel.motion.push((4 * t + 1..=5 * t).map(|j| num(j, &mut errors)).collect());
        }
        if let Some(first) = errors.first() {
            return Err(Error::Parse {
                count: errors.len(),
                first: first.clone(),
            });
        }
        panel.validate()?;
        Ok(panel)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Mean and ML covariance (divisor `n`) of a complete panel, observed order
/// `HR_1..HR_T, SL_1..SL_T`.
pub fn empirical_moments(panel: &PanelDataset) -> Result<SampleMoments> {
    let n = panel.n_fans();
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 fans for sample moments, got {n}")));
    }
    let p = 2 * panel.n_points;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            panel
                .observed_row(i)
                .ok_or_else(|| Error::Data(format!("fan {} has missing stress levels", panel.fan_ids[i])))
        })
        .collect::<Result<_>>()?;
    let mut mean = DVector::<f64>::zeros(p);
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::<f64>::zeros(p, p);
    let mut d = vec![0.0; p];
    for r in &rows {
        for k in 0..p {
            d[k] = r[k] - mean[k];
        }
        for j in 0..p {
            for i in j..p {
                cov[(i, j)] += d[i] * d[j];
            }
        }
    }
    for j in 0..p {
        for i in j..p {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(SampleMoments { n, mean, cov })
}
