//! Shared fixtures for the integration tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rumsim::config::RunConfig;
use rumsim_core::rng::StreamKey;

pub const CONFIG_DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/configs");

pub fn shipped_config(name: &str) -> PathBuf {
    Path::new(CONFIG_DIR).join(name)
}

const COLUMNS: [&str; 19] = [
    "TRAIN_AV", "CAR_AV", "SM_AV", "TRAIN_TT", "TRAIN_CO", "TRAIN_HE", "SM_TT", "SM_CO", "SM_HE", "SM_SEATS",
    "CAR_TT", "CAR_CO", "MALE", "GA", "FIRST", "AGE", "LUGGAGE", "PURPOSE", "CHOICE",
];

/// Write a synthetic survey file with the Swissmetro column layout.
///
/// Choices follow a utility that is nonlinear in travel time and cost, so a
/// flexible utility fits the training data better than a linear one. About
/// one row in two hundred carries the unusable choice code 0 and a handful
/// of rows have a missing `LUGGAGE` cell.
pub fn write_mock_swissmetro(path: &Path, rows: usize, seed: u64) {
    let mut w = csv::Writer::from_path(path).expect("create mock survey");
    w.write_record(COLUMNS).unwrap();
    let key = StreamKey::new(seed);
    for i in 0..rows {
        let mut s = key.split(i as u64).stream();
        let car_av = s.next_uniform() < 0.8;
        let ga = s.next_uniform() < 0.15;
        let male = s.next_uniform() < 0.6;
        let first = s.next_uniform() < 0.3;
        let age = 1 + s.next_index(4);
        let luggage = [0, 1, 3][s.next_index(3)];
        let purpose = 1 + s.next_index(9);
        let train_tt = s.next_range(30.0, 300.0).round();
        let train_co = if ga { 0.0 } else { s.next_range(10.0, 200.0).round() };
        let train_he = [30.0, 60.0, 120.0][s.next_index(3)];
        let sm_tt = (train_tt * s.next_range(0.4, 0.8)).round();
        let sm_co = if ga { 0.0 } else { (train_co * s.next_range(0.9, 1.4)).round() };
        let sm_he = [10.0, 20.0, 30.0][s.next_index(3)];
        let sm_seats = u8::from(s.next_uniform() < 0.1);
        let (car_tt, car_co) = if car_av {
            (s.next_range(30.0, 300.0).round(), s.next_range(10.0, 200.0).round())
        } else {
            (0.0, 0.0)
        };

        let t = |m: f64| m / 100.0;
        let v_train = -0.3 - 1.8 * t(train_tt) + 0.35 * t(train_tt).powi(2) - 0.9 * t(train_co)
            - 0.5 * t(train_he)
            + 0.6 * f64::from(u8::from(ga))
            + 0.1 * (age as f64 - 2.0);
        let v_sm = 0.2 - 2.2 * t(sm_tt) + 0.5 * t(sm_tt).powi(2) - 1.1 * t(sm_co) * (1.0 + 0.5 * t(sm_tt))
            - 0.6 * t(sm_he)
            + 0.2 * f64::from(sm_seats)
            + 0.3 * f64::from(u8::from(first))
            - 0.15 * luggage as f64;
        let v_car = -1.6 * t(car_tt) + 0.3 * t(car_tt).powi(2) - 1.0 * t(car_co) + 0.4 * f64::from(u8::from(male));
        let mut best = (0usize, f64::NEG_INFINITY);
        for (j, v) in [v_train, v_sm, v_car].into_iter().enumerate() {
            if j == 2 && !car_av {
                continue;
            }
            let u = v - (-s.next_uniform().max(1e-300).ln()).ln();
            if u > best.1 {
                best = (j, u);
            }
        }
        let choice = if s.next_uniform() < 0.005 { 0 } else { best.0 + 1 };
        let luggage_cell = if s.next_uniform() < 0.0005 { String::new() } else { luggage.to_string() };

        let record = [
            "1".to_string(),
            u8::from(car_av).to_string(),
            "1".to_string(),
            train_tt.to_string(),
            train_co.to_string(),
            train_he.to_string(),
            sm_tt.to_string(),
            sm_co.to_string(),
            sm_he.to_string(),
            sm_seats.to_string(),
            car_tt.to_string(),
            car_co.to_string(),
            u8::from(male).to_string(),
            u8::from(ga).to_string(),
            u8::from(first).to_string(),
            age.to_string(),
            luggage_cell,
            purpose.to_string(),
            choice.to_string(),
        ];
        w.write_record(&record).unwrap();
    }
    w.flush().unwrap();
}

/// The shipped Swissmetro template pointed at `data`.
pub fn swissmetro_config(data: &Path, out: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(shipped_config("swissmetro.toml")).expect("template parses");
    cfg.dataset.as_mut().expect("template has a dataset").path = data.to_path_buf();
    cfg.output.dir = out.to_path_buf();
    cfg
}

/// Every cell of a CSV file as text, header included.
pub fn read_csv_cells(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path).expect("open csv");
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}
