//! Daily weather. The bundled series is synthetic: a two-state Markov chain
//! for wet days with exponential amounts, and a sinusoidal annual temperature
//! with Gaussian noise.

use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Seed the bundled fixture was generated with.
pub const FIXTURE_SEED: u64 = 20_231_107;
pub const FIXTURE_DAYS: usize = 5 * 365;

const FIXTURE_CSV: &str = include_str!("../fixtures/forcing.csv");

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Record {
    day: usize,
    precip_mm: f64,
    #[serde(rename = "temp_C")]
    temp_c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forcing {
    pub precip_mm: Vec<f64>,
    pub temp_c: Vec<f64>,
}

impl Forcing {
    /// The bundled five-year series.
    pub fn fixture() -> Self {
        Self::from_reader(FIXTURE_CSV.as_bytes()).expect("bundled forcing parses")
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    /// Reads `day,precip_mm,temp_C` rows; days must run 0, 1, 2, ...
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut precip_mm = Vec::new();
        let mut temp_c = Vec::new();
        for (i, rec) in csv::Reader::from_reader(reader).deserialize::<Record>().enumerate() {
            let rec = rec?;
            if rec.day != i {
                return Err(Error::Forcing(format!("row {i} has day {}", rec.day)));
            }
            if !(rec.precip_mm >= 0.0) || !rec.temp_c.is_finite() {
                return Err(Error::Forcing(format!("bad values on day {i}")));
            }
            precip_mm.push(rec.precip_mm);
            temp_c.push(rec.temp_c);
        }
        Ok(Self { precip_mm, temp_c })
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for (day, (&p, &t)) in self.precip_mm.iter().zip(&self.temp_c).enumerate() {
            w.serialize(Record { day, precip_mm: p, temp_c: t }).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn len(&self) -> usize {
        self.precip_mm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.precip_mm.is_empty()
    }

    /// Same temperatures, no rain.
    pub fn without_rain(&self) -> Self {
        Self { precip_mm: vec![0.0; self.len()], temp_c: self.temp_c.clone() }
    }

    /// Seeded synthetic weather, rounded to 0.01 mm and 0.01 degC.
    pub fn synthetic(seed: u64, days: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amount = Exp::new(1.0 / 5.5).unwrap();
        let noise = Normal::new(0.0, 1.5).unwrap();
        let mut wet = false;
        let mut precip_mm = Vec::with_capacity(days);
        let mut temp_c = Vec::with_capacity(days);
        for d in 0..days {
            let phase = 2.0 * std::f64::consts::PI * ((d % 365) as f64 - 110.0) / 365.0;
            // wetter winters
            let season = 0.08 * (2.0 * std::f64::consts::PI * (d % 365) as f64 / 365.0).cos();
            let p_wet = if wet { 0.62 + season } else { 0.33 + season };
            wet = rng.random::<f64>() < p_wet;
            let p: f64 = if wet { amount.sample(&mut rng) } else { 0.0 };
            let t = 11.0 + 6.0 * phase.sin() + noise.sample(&mut rng);
            precip_mm.push((p * 100.0).round() / 100.0);
            temp_c.push((t * 100.0).round() / 100.0);
        }
        Self { precip_mm, temp_c }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_matches_generator() {
        let f = Forcing::fixture();
        assert_eq!(f.len(), FIXTURE_DAYS);
        assert_eq!(f, Forcing::synthetic(FIXTURE_SEED, FIXTURE_DAYS));
    }

    #[test]
    fn fixture_climate_is_plausible() {
        let f = Forcing::fixture();
        let annual = f.precip_mm.iter().sum::<f64>() / 5.0;
        assert!((700.0..1300.0).contains(&annual), "{annual}");
        let mean_t = f.temp_c.iter().sum::<f64>() / f.len() as f64;
        assert!((mean_t - 11.0).abs() < 0.5);
    }

    #[test]
    fn csv_round_trip() {
        let f = Forcing::synthetic(3, 40);
        assert_eq!(Forcing::from_reader(f.to_csv().as_bytes()).unwrap(), f);
        assert!(f.to_csv().starts_with("day,precip_mm,temp_C\n"));
    }

    #[test]
    fn out_of_order_days_rejected() {
        let bad = "day,precip_mm,temp_C\n0,1.0,3.0\n2,0.0,4.0\n";
        assert!(matches!(Forcing::from_reader(bad.as_bytes()), Err(Error::Forcing(_))));
    }
}
