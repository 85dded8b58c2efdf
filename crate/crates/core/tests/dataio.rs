use std::fs;
use std::io::BufReader;

use rulkit::dataio::{
    load_series, parse_rul_file, read_series_csv, write_series_csv, MultivariateSeries, PreprocessConfig,
    Preprocessor,
};
use rulkit::synth::{generate_fleet, SynthConfig};
use tempfile::TempDir;

#[test]
fn csv_file_roundtrip_keeps_missing_cells() {
    let dir = TempDir::new().unwrap();
    let fleet = generate_fleet(&SynthConfig {
        n_instances: 5,
        missing_prob: 0.2,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let path = dir.path().join("fleet.csv");
    write_series_csv(fs::File::create(&path).unwrap(), &fleet).unwrap();
    let back = load_series(&path).unwrap();
    assert_eq!(back, fleet);
    assert!(back.iter().any(|s| s.missing_fraction() > 0.1));
}

#[test]
fn turbofan_text_and_rul_file() {
    let dir = TempDir::new().unwrap();
    let mut text = String::new();
    for unit in 1..=3 {
        for cycle in 1..=(4 + unit) {
            let vals: Vec<String> = (0..24).map(|j| format!("{:.4}", unit as f64 + j as f64 * 0.5 + cycle as f64 * 0.01)).collect();
            text += &format!("{unit} {cycle} {}\n", vals.join(" "));
        }
    }
    let path = dir.path().join("train_FD.txt");
    fs::write(&path, text).unwrap();
    let series = load_series(&path).unwrap();
    assert_eq!(series.len(), 3);
    assert_eq!(series.iter().map(MultivariateSeries::len).collect::<Vec<_>>(), [5, 6, 7]);
    assert!(series.iter().all(|s| s.dim() == 24 && s.missing_fraction() == 0.0));
    assert_eq!(series[1].readings()[2][0], 2.03);

    let ruls = parse_rul_file(BufReader::new("112\n98\n\n69\n".as_bytes())).unwrap();
    assert_eq!(ruls, [112, 98, 69]);
}

#[test]
fn preprocessing_applies_the_training_fit_to_new_series() {
    let fleet = generate_fleet(&SynthConfig {
        n_instances: 6,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let (train, test) = fleet.split_at(4);
    let pre = Preprocessor::fit(train, &PreprocessConfig::default()).unwrap();
    assert_eq!(pre.output_dim(), 2);
    for s in test {
        let p = pre.transform(s).unwrap();
        assert_eq!((p.len(), p.dim()), (s.len(), 2));
        assert_eq!(p.timestamps(), s.timestamps());
    }
    let json = serde_json::to_string(&pre).unwrap();
    let back: Preprocessor = serde_json::from_str(&json).unwrap();
    assert_eq!(back, pre);
}

#[test]
fn csv_written_series_parse_back_from_memory() {
    let s = MultivariateSeries::new(
        "u7",
        vec![0.0, 0.5, 2.0],
        vec![vec![1.0, 0.0], vec![0.0, -3.25], vec![4.0, 5.0]],
        vec![vec![true, false], vec![false, true], vec![true, true]],
    )
    .unwrap();
    let mut buf = Vec::new();
    write_series_csv(&mut buf, std::slice::from_ref(&s)).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.lines().nth(1).unwrap().ends_with(",1,"), "{text}");
    assert_eq!(read_series_csv(buf.as_slice()).unwrap(), vec![s]);
}
