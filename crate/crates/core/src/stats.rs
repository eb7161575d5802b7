//! Gendered probability mass per axis value, linear fits with a 95% band,
//! Pearson's r against the axis index, and the edge-window uncertainty
//! metric.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::backend::FillMaskResult;
use crate::schema::{GenderClass, GenderLexicon, Prompt, WAxis};

/// Denominator below which the normalized female share is undefined.
pub const SHARE_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("inconsistent input: {0}")]
    Consistency(String),
    #[error("fits are over different axes")]
    AxisMismatch,
}

pub type Result<T, E = StatsError> = std::result::Result<T, E>;

/// Which per-point quantity a fit or uncertainty score is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    #[default]
    #[serde(rename = "normalized_female_share")]
    FemaleShare,
    #[serde(rename = "raw_female_mass")]
    FemaleMass,
    #[serde(rename = "raw_male_mass")]
    MaleMass,
    #[serde(rename = "normalized_male_share")]
    MaleShare,
}

impl Response {
    pub fn as_str(self) -> &'static str {
        match self {
            Response::FemaleShare => "normalized_female_share",
            Response::FemaleMass => "raw_female_mass",
            Response::MaleMass => "raw_male_mass",
            Response::MaleShare => "normalized_male_share",
        }
    }
}

impl std::str::FromStr for Response {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "normalized_female_share" | "share" => Ok(Response::FemaleShare),
            "raw_female_mass" | "female" => Ok(Response::FemaleMass),
            "raw_male_mass" | "male" => Ok(Response::MaleMass),
            "normalized_male_share" => Ok(Response::MaleShare),
            other => Err(format!("unknown basis `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderMassPoint {
    pub w_index: usize,
    pub w_value: String,
    pub female_mass: f64,
    pub male_mass: f64,
    pub n_prompts: usize,
    /// Prompts whose top-k held no gendered token at all.
    pub n_missing: usize,
}

impl GenderMassPoint {
    pub fn female_share(&self) -> Option<f64> {
        normalized_female_share(self)
    }

    pub fn value(&self, response: Response) -> Option<f64> {
        match response {
            Response::FemaleShare => self.female_share(),
            Response::FemaleMass => Some(self.female_mass),
            Response::MaleMass => Some(self.male_mass),
            Response::MaleShare => self.female_share().map(|f| 1.0 - f),
        }
    }
}

pub fn normalized_female_share(point: &GenderMassPoint) -> Option<f64> {
    let total = point.female_mass + point.male_mass;
    (total >= SHARE_EPSILON).then(|| point.female_mass / total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSeries {
    pub axis: WAxis,
    pub points: Vec<GenderMassPoint>,
}

impl AxisSeries {
    /// Averages per-prompt `(w_index, female, male)` masses by axis index.
    pub fn from_prompt_masses<I>(axis: &WAxis, masses: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, f64, f64)>,
    {
        let mut sums = vec![(0.0f64, 0.0f64, 0usize, 0usize); axis.len()];
        for (w_index, female, male) in masses {
            let slot = sums.get_mut(w_index).ok_or_else(|| {
                StatsError::Consistency(format!("w_index {w_index} outside axis of length {}", axis.len()))
            })?;
            slot.0 += female;
            slot.1 += male;
            slot.2 += 1;
            if female + male == 0.0 {
                slot.3 += 1;
            }
        }
        let points = sums
            .into_iter()
            .enumerate()
            .filter(|(_, s)| s.2 > 0)
            .map(|(w_index, (f, m, n, missing))| GenderMassPoint {
                w_index,
                w_value: axis.values()[w_index].clone(),
                female_mass: f / n as f64,
                male_mass: m / n as f64,
                n_prompts: n,
                n_missing: missing,
            })
            .collect();
        Ok(Self {
            axis: axis.clone(),
            points,
        })
    }

    pub fn reversed(&self) -> Self {
        let mut points = self.points.clone();
        points.reverse();
        Self {
            axis: self.axis.clone(),
            points,
        }
    }

    fn observations(&self, response: Response) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .filter_map(|p| p.value(response).map(|y| (p.w_index as f64, y)))
            .collect()
    }
}

/// Female and male mass of one result's top-k tokens.
pub fn prompt_gender_mass(result: &FillMaskResult, lexicon: &GenderLexicon) -> (f64, f64) {
    result
        .predictions
        .iter()
        .fold((0.0, 0.0), |(f, m), p| match lexicon.classify(&p.token) {
            GenderClass::Female => (f + p.score, m),
            GenderClass::Male => (f, m + p.score),
            GenderClass::Neutral => (f, m),
        })
}

pub fn aggregate_gender_mass(
    results: &[FillMaskResult],
    prompts: &[Prompt],
    axis: &WAxis,
    lexicon: &GenderLexicon,
) -> Result<AxisSeries> {
    let masses = results
        .iter()
        .map(|r| {
            let prompt = prompts
                .get(r.prompt_id)
                .ok_or_else(|| StatsError::Consistency(format!("result references unknown prompt {}", r.prompt_id)))?;
            if axis.values().get(prompt.w_index) != Some(&prompt.w_value) {
                return Err(StatsError::Consistency(format!(
                    "prompt {} has w_value `{}` not at axis index {}",
                    r.prompt_id, prompt.w_value, prompt.w_index
                )));
            }
            let (f, m) = prompt_gender_mass(r, lexicon);
            Ok((prompt.w_index, f, m))
        })
        .collect::<Result<Vec<_>>>()?;
    AxisSeries::from_prompt_masses(axis, masses)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub w_index: usize,
    pub lower: f64,
    pub fitted: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub response: Response,
    pub slope: f64,
    pub intercept: f64,
    pub pearson_r: f64,
    /// Set when the response has zero variance and r is reported as 0.
    pub r_degenerate: bool,
    /// 95% confidence band for the regression mean at every series point.
    pub ci95_band: Vec<BandPoint>,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PearsonR {
    pub r: f64,
    pub degenerate: bool,
}

struct Moments {
    n: usize,
    mean_x: f64,
    mean_y: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
    constant_y: bool,
}

fn moments(obs: &[(f64, f64)]) -> Result<Moments> {
    let n = obs.len();
    if n < 3 {
        return Err(StatsError::InsufficientData(format!(
            "need at least 3 non-missing points, have {n}"
        )));
    }
    let nf = n as f64;
    let mean_x = obs.iter().map(|o| o.0).sum::<f64>() / nf;
    let mean_y = obs.iter().map(|o| o.1).sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    let mut max_dev: f64 = 0.0;
    for &(x, y) in obs {
        let (dx, dy) = (x - mean_x, y - mean_y);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
        max_dev = max_dev.max(dy.abs());
    }
    if sxx == 0.0 {
        return Err(StatsError::InsufficientData("axis indices have zero variance".into()));
    }
    Ok(Moments {
        n,
        mean_x,
        mean_y,
        sxx,
        syy,
        sxy,
        constant_y: max_dev <= 1e-12 * mean_y.abs().max(1.0),
    })
}

fn pearson_from(m: &Moments) -> PearsonR {
    if m.constant_y {
        return PearsonR {
            r: 0.0,
            degenerate: true,
        };
    }
    PearsonR {
        r: (m.sxy / (m.sxx * m.syy).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// Sample correlation between axis index and response.
pub fn pearson_r_vs_index(series: &AxisSeries, response: Response) -> Result<PearsonR> {
    Ok(pearson_from(&moments(&series.observations(response))?))
}

/// Ordinary least squares of response on axis index with a t-based 95%
/// confidence band for the mean.
pub fn linear_fit(series: &AxisSeries, response: Response) -> Result<FitSummary> {
    let obs = series.observations(response);
    let m = moments(&obs)?;
    let slope = m.sxy / m.sxx;
    let intercept = m.mean_y - slope * m.mean_x;
    let sse: f64 = obs
        .iter()
        .map(|&(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let dof = (m.n - 2) as f64;
    let s = (sse / dof).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof).expect("dof >= 1").inverse_cdf(0.975);
    let nf = m.n as f64;
    let ci95_band = series
        .points
        .iter()
        .map(|p| {
            let x = p.w_index as f64;
            let fitted = intercept + slope * x;
            let half = t * s * (1.0 / nf + (x - m.mean_x).powi(2) / m.sxx).sqrt();
            BandPoint {
                w_index: p.w_index,
                lower: fitted - half,
                fitted,
                upper: fitted + half,
            }
        })
        .collect();
    let r = pearson_from(&m);
    Ok(FitSummary {
        response,
        slope,
        intercept,
        pearson_r: r.r,
        r_degenerate: r.degenerate,
        ci95_band,
        n: m.n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiff {
    pub slope_diff: f64,
    pub r_diff: f64,
}

/// Male minus female, component-wise.
pub fn fit_difference(male_fit: &FitSummary, female_fit: &FitSummary) -> Result<FitDiff> {
    let xs = |f: &FitSummary| f.ci95_band.iter().map(|b| b.w_index).collect::<Vec<_>>();
    if xs(male_fit) != xs(female_fit) {
        return Err(StatsError::AxisMismatch);
    }
    Ok(FitDiff {
        slope_diff: male_fit.slope - female_fit.slope,
        r_diff: male_fit.pearson_r - female_fit.pearson_r,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    /// Percentage points.
    pub value: f64,
    pub n_edge: usize,
    pub basis: Response,
}

pub const DEFAULT_N_EDGE: usize = 5;

fn window_mean(points: &[GenderMassPoint], basis: Response, which: &str) -> Result<f64> {
    let values: Vec<f64> = points.iter().filter_map(|p| p.value(basis)).collect();
    if 2 * values.len() <= points.len() {
        return Err(StatsError::InsufficientData(format!(
            "{which} window has {} of {} points defined",
            values.len(),
            points.len()
        )));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Absolute difference, in percentage points, between the mean response
/// over the first and the last `n_edge` points of the series.
pub fn uncertainty(series: &AxisSeries, n_edge: usize, basis: Response) -> Result<UncertaintyScore> {
    let n = series.points.len();
    if n_edge == 0 || n < 2 * n_edge {
        return Err(StatsError::InsufficientData(format!(
            "uncertainty with n_edge {n_edge} needs {} points, have {n}",
            2 * n_edge.max(1)
        )));
    }
    let first = window_mean(&series.points[..n_edge], basis, "first")?;
    let last = window_mean(&series.points[n - n_edge..], basis, "last")?;
    Ok(UncertaintyScore {
        value: (first - last).abs() * 100.0,
        n_edge,
        basis,
    })
}
