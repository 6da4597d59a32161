//! Bakery-like daily demand for several stores, used to exercise the
//! newsvendor pipeline without the external sales data.
//!
//! Every store follows a linear demand model in calendric and weather
//! covariates. The store coefficients scatter around a shared vector, so
//! stores are related but not identical. Covariates after the intercept, in
//! order: `weekend, friday, temperature, rain, holiday, promo`. The
//! temperature is a stationary anomaly rather than a seasonal curve, so a
//! short window does not have to extrapolate a trend.

use chrono::{Datelike, Months, NaiveDate, Weekday};
use mtfuse::{Dataset, Sample, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::ingest::TimedDataset;

pub const COVARIATES: [&str; 6] = ["weekend", "friday", "temperature", "rain", "holiday", "promo"];

const SHARED: [f64; 7] = [40.0, 10.0, 5.0, 3.0, -4.0, 12.0, 6.0];
/// Per-coefficient spread of the store models at unit heterogeneity.
const SPREAD: [f64; 7] = [8.0, 3.0, 2.0, 1.5, 2.0, 4.0, 2.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureSpec {
    pub stores: usize,
    /// First month, `YYYY-MM`.
    pub start: String,
    /// Months of data in total, test window included.
    pub span_months: usize,
    /// Scale of the store-to-store coefficient differences.
    pub heterogeneity: f64,
    pub noise_sd: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self { stores: 20, start: "2018-01".into(), span_months: 16, heterogeneity: 0.5, noise_sd: 6.0 }
    }
}

impl FixtureSpec {
    fn start_date(&self) -> Result<NaiveDate> {
        NaiveDate::parse_from_str(&format!("{}-01", self.start), "%Y-%m-%d")
            .map_err(|_| config_err(format!("fixture start {:?} is not YYYY-MM", self.start)))
    }

    pub fn validate(&self) -> Result<()> {
        self.start_date()?;
        if self.stores == 0 || self.span_months < 2 {
            return Err(config_err("fixture needs at least one store and two months"));
        }
        if !(self.heterogeneity >= 0.0) || !(self.noise_sd > 0.0) {
            return Err(config_err("fixture heterogeneity must be nonnegative and noise positive"));
        }
        Ok(())
    }
}

/// Store coefficients and daily samples, in date order within each store.
#[derive(Clone, Debug, PartialEq)]
pub struct Fixture {
    pub data: TimedDataset,
    pub theta_star: Vec<Vec<f64>>,
}

fn stream(seed: u64, s: u64) -> ChaCha20Rng {
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    r.set_stream(s);
    r
}

/// Generates the fixture. Stream 0 draws store models, stream 1 the shared
/// weather, stream `2 + j` the days of store `j`.
pub fn generate_fixture(spec: &FixtureSpec, seed: u64) -> Result<Fixture> {
    spec.validate()?;
    let start = spec.start_date()?;
    let end = start + Months::new(spec.span_months as u32);
    let days: Vec<NaiveDate> = start.iter_days().take_while(|d| *d < end).collect();
    let std = Normal::new(0.0, 1.0).expect("unit normal");

    let mut models = stream(seed, 0);
    let theta_star: Vec<Vec<f64>> = (0..spec.stores)
        .map(|_| SHARED.iter().zip(SPREAD).map(|(&c, s)| c + spec.heterogeneity * s * std.sample(&mut models)).collect())
        .collect();

    let mut weather = stream(seed, 1);
    let flag = |b: bool| f64::from(u8::from(b));
    // AR(1) with unit stationary variance.
    let mut temperature = std.sample(&mut weather);
    let calendar: Vec<[f64; 5]> = days
        .iter()
        .map(|d| {
            temperature = 0.7 * temperature + (1.0f64 - 0.49).sqrt() * std.sample(&mut weather);
            let weekend = matches!(d.weekday(), Weekday::Sat | Weekday::Sun);
            let friday = d.weekday() == Weekday::Fri;
            let rain = weather.random_bool(0.3);
            let holiday = weather.random_bool(0.04);
            [flag(weekend), flag(friday), temperature, flag(rain), flag(holiday)]
        })
        .collect();
    let periods: Vec<i64> = days.iter().map(|d| i64::from(d.year()) * 12 + i64::from(d.month0())).collect();

    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| config_err(e.to_string()))?;
    let tasks = theta_star
        .iter()
        .enumerate()
        .map(|(j, theta)| {
            let mut r = stream(seed, 2 + j as u64);
            let samples = calendar
                .iter()
                .map(|cal| {
                    let promo = flag(r.random_bool(0.15));
                    let mut x = Vec::with_capacity(7);
                    x.push(1.0);
                    x.extend_from_slice(cal);
                    x.push(promo);
                    let mean: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
                    Sample::new(x, mean + noise.sample(&mut r))
                })
                .collect();
            Task::new(format!("store{j:02}"), samples)
        })
        .collect::<mtfuse::Result<Vec<_>>>()?;
    let data = Dataset::new(tasks)?;
    Ok(Fixture { data: TimedDataset { data, periods: vec![periods; spec.stores] }, theta_star })
}
