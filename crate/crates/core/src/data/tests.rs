use super::*;

#[test]
fn normalisation_uses_train_statistics_only() {
    let ds = glyph_dataset(200, 50, 1).unwrap().normalized();
    let m = ds.train.x.mean();
    let var = ds.train.x.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / ds.train.x.len() as f64;
    assert!(m.abs() < 1e-10, "{m}");
    assert!((var.sqrt() - 1.0).abs() < 1e-10);
    // the test split is transformed with the train statistics, not its own
    let raw = glyph_dataset(200, 50, 1).unwrap();
    assert_eq!(ds.test.x, ds.normalization.apply(&raw.test.x));
    let back = ds.normalization.invert(&ds.test.x);
    for (a, b) in back.data().iter().zip(raw.test.x.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn per_channel_statistics() {
    // two channels with different scales
    let x = Tensor::matrix(2, 4, vec![1.0, 10.0, 3.0, 30.0, 5.0, 50.0, 7.0, 70.0]).unwrap();
    let n = Normalization::fit(&x, 2);
    assert_eq!(n.mean, vec![4.0, 40.0]);
    let y = n.apply(&x);
    for c in 0..2 {
        let vals: Vec<f64> = y.data().iter().skip(c).step_by(2).copied().collect();
        let m = vals.iter().sum::<f64>() / 4.0;
        let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
    }
}

#[test]
fn glyphs_are_deterministic_and_balanced() {
    let a = glyph_dataset(100, 20, 9).unwrap();
    let b = glyph_dataset(100, 20, 9).unwrap();
    assert_eq!(a, b);
    for k in 0..10 {
        assert_eq!(a.train.y.iter().filter(|&&y| y == k).count(), 10);
    }
    assert!(a.train.x.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_ne!(glyph_dataset(100, 20, 10).unwrap().train.x, a.train.x);
}

#[test]
fn informative_pixels_carry_the_label() {
    let ds = make_informative_pixels_dataset(64, 4, 500, 3).unwrap();
    let pos = ds.informative.clone().unwrap();
    assert_eq!(pos.len(), 4);
    assert_eq!(ds.input, InputShape::image(8, 8, 1));
    for r in 0..ds.train.len() {
        let row = ds.train.x.row(r);
        let s = if ds.train.y[r] == 1 { 1.0 } else { -1.0 };
        assert_eq!(row[pos[0]], s * synthetic::INFORMATIVE_AMPLITUDE);
        assert_eq!(row[pos[3]], -s * synthetic::INFORMATIVE_AMPLITUDE);
        let info_sum: f64 = pos.iter().map(|&p| row[p]).sum();
        assert_eq!(info_sum, 0.0);
    }
    let ones = ds.train.y.iter().filter(|&&y| y == 1).count();
    assert!((200..300).contains(&ones));
    assert!(make_informative_pixels_dataset(4, 4, 10, 0).is_err());
}

#[test]
fn sources_parse() {
    assert_eq!("glyphs".parse::<DataSource>().unwrap(), DataSource::Glyphs);
    assert_eq!(
        "informative:64:4".parse::<DataSource>().unwrap(),
        DataSource::Informative { dim: 64, k: 4 }
    );
    assert_eq!("mixture".parse::<DataSource>().unwrap(), DataSource::Mixture(None));
    for s in [
        "glyphs",
        "mixture:/tmp/m.kv",
        "blobs",
        "informative:9:2",
        "mnist:/d",
        "cifar100:/c",
    ] {
        assert_eq!(s.parse::<DataSource>().unwrap().to_string(), s);
    }
    assert!("imagenet".parse::<DataSource>().is_err());
    assert!("informative:64".parse::<DataSource>().is_err());
}

#[test]
fn mixture_dataset_is_balanced_and_raw() {
    let ds = DataSource::Mixture(None).open(30, 9, 2).unwrap();
    assert_eq!(ds.classes, 3);
    assert_eq!(ds.train.y[..6], [0, 1, 2, 0, 1, 2]);
    assert!(ds.normalization.is_identity());
}

#[test]
fn missing_files_are_io_errors() {
    let err = DataSource::Mnist("/nonexistent/dir".into()).open(1, 1, 0).unwrap_err();
    assert_eq!(err.exit_code(), 5);
}
