use std::fs;
use std::path::PathBuf;

use num_complex::Complex32;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use xdom::io::*;
use xdom::synth::{synth_dataset, synth_dataset_with_devices, DeviceProfile, Family, Protocol, SynthConfig, SynthError};

fn meta() -> CaptureMeta {
    let mut extensions = serde_json::Map::new();
    extensions.insert("vendor:antenna".into(), serde_json::json!({"model": "VERT2450", "gain": [3, 5]}));
    CaptureMeta {
        sample_rate: 200e6 / 3.0,
        center_frequency: 2.414e9,
        datatype: DATATYPE.into(),
        datetime: "2021-01-01T00:00:00Z".into(),
        device_id: 4,
        protocol: Protocol::Bt,
        scenario_seed: 7,
        extensions,
    }
}

fn noise(n: usize, sigma: f32, seed: u64) -> Vec<Complex32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let re: f32 = StandardNormal.sample(&mut rng);
            let im: f32 = StandardNormal.sample(&mut rng);
            Complex32::new(re * sigma, im * sigma)
        })
        .collect()
}

#[test]
fn capture_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("cap");
    let mut x = noise(3000, 1.0, 1);
    x.push(Complex32::new(f32::MIN_POSITIVE, -0.0));
    x.push(Complex32::new(f32::MAX, 1e-40));
    write_capture(&x, &meta(), &stem).unwrap();
    assert_eq!(fs::metadata(data_path(&stem)).unwrap().len(), 8 * x.len() as u64);
    let (y, m) = read_capture(&stem).unwrap();
    assert_eq!(m, meta());
    assert_eq!(x.len(), y.len());
    for (a, b) in x.iter().zip(&y) {
        assert_eq!((a.re.to_bits(), a.im.to_bits()), (b.re.to_bits(), b.im.to_bits()));
    }
    let raw: serde_json::Value = serde_json::from_str(&fs::read_to_string(meta_path(&stem)).unwrap()).unwrap();
    for key in ["sample_rate", "center_frequency", "datatype", "datetime", "device_id", "protocol", "scenario_seed", "extensions"] {
        assert!(raw.get(key).is_some(), "{key}");
    }
    assert_eq!(raw["extensions"]["vendor:antenna"]["gain"][1], 5);
}

#[test]
fn forty_megasample_size() {
    assert_eq!(8u64 * 40_000_000, 320_000_000);
    assert!(40_000_000 / FRAME_LEN <= 39_062);
}

#[test]
fn read_errors() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("cap");
    write_capture(&noise(16, 1.0, 2), &meta(), &stem).unwrap();

    let mut bytes = fs::read(data_path(&stem)).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(data_path(&stem), &bytes).unwrap();
    assert!(matches!(read_capture(&stem), Err(IoError::Truncated { .. })));

    let mut bad = meta();
    bad.datatype = "ci16_le".into();
    fs::write(meta_path(&stem), serde_json::to_string(&bad).unwrap()).unwrap();
    assert!(matches!(read_capture(&stem), Err(IoError::Datatype(_))));

    fs::remove_file(meta_path(&stem)).unwrap();
    assert!(matches!(read_capture(&stem), Err(IoError::MissingSidecar(_))));

    let other = dir.path().join("nan");
    assert!(matches!(write_capture(&[Complex32::new(f32::NAN, 0.0)], &meta(), &other), Err(IoError::NonFinite(0))));
    assert!(matches!(write_capture(&[], &bad, &other), Err(IoError::Datatype(_))));
}

#[test]
fn segmentation_keeps_bursts_only() {
    let floor = 10f32.powf(-40.0 / 20.0);
    let mut x = noise(10 * 1024, floor, 3);
    let burst = noise(4096, 1.0, 4);
    for (i, v) in burst.iter().enumerate() {
        x[3 * 1024 + i] += v;
    }
    let frames = segment_capture(&x, &meta(), &PathBuf::from("cap"), 1024, DEFAULT_GATE_DB).unwrap();
    assert_eq!(frames.iter().map(|f| f.offset).collect::<Vec<_>>(), vec![3072, 4096, 5120, 6144]);
    assert!(frames.iter().all(|f| f.samples.len() == 1024 && f.device_id == 4 && f.protocol == Protocol::Bt));
    assert_eq!(frames[0].samples[..], x[3072..4096]);

    let pure = noise(64 * 1024, 1.0, 5);
    assert!(segment_capture(&pure, &meta(), &PathBuf::from("n"), 1024, DEFAULT_GATE_DB).unwrap().is_empty());
    assert!(matches!(segment_capture(&pure[..1000], &meta(), &PathBuf::from("n"), 1024, 6.0), Err(IoError::TooShort { .. })));
}

#[test]
fn manifest_errors_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join(MANIFEST_FILE);
    assert!(matches!(build_manifest(&[], &out, 1024, 6.0), Err(IoError::NoCaptures)));

    let mut stems = Vec::new();
    for (name, dev, proto) in [("b", 9, Protocol::Wifi), ("a", 2, Protocol::Bt)] {
        let mut x = noise(8 * 1024, 0.01, dev as u64);
        for v in &mut x[2048..4096] {
            *v += Complex32::new(1.0, 0.0);
        }
        let stem = dir.path().join(name);
        write_capture(&x, &CaptureMeta { device_id: dev, protocol: proto, ..meta() }, &stem).unwrap();
        stems.push(stem);
    }
    let dup = vec![stems[0].clone(), stems[0].clone()];
    assert!(matches!(build_manifest(&dup, &out, 1024, 6.0), Err(IoError::DuplicateCapture(_))));

    let m = build_manifest(&stems, &out, 1024, 6.0).unwrap();
    assert_eq!(m.devices, vec![2, 9]);
    assert_eq!(m.protocols, vec![Protocol::Wifi, Protocol::Bt]);
    let order: Vec<(&str, usize)> = m.frames.iter().map(|r| (r.file.as_str(), r.offset)).collect();
    assert_eq!(order, vec![("a", 2048), ("a", 3072), ("b", 2048), ("b", 3072)]);
    assert_eq!(m.frames[0].device, 0);
    assert_eq!(m.protocol_of(&m.frames[0]), Protocol::Bt);
    assert_eq!(DatasetManifest::read(&out).unwrap(), m);

    let frames = load_frames(&m, dir.path()).unwrap();
    assert!(frames.iter().all(|f| f.samples.len() == 1024));
    assert_eq!(frames[2].device_id, 9);
}

fn tree_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn synth_dataset_counts_and_determinism() {
    let cfg = SynthConfig { frames: 100, scenario_seeds: vec![17], ..SynthConfig::default() };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let m = synth_dataset(&cfg, a.path()).unwrap();
    assert_eq!(m.frames.len(), 2000);
    assert_eq!(m.devices.len(), 10);
    assert_eq!(m.scenarios, vec![17]);
    for d in 0..10 {
        for p in 0..2 {
            assert_eq!(m.frames.iter().filter(|r| r.device == d && r.protocol == p).count(), 100);
        }
    }
    synth_dataset(&cfg, b.path()).unwrap();
    assert_eq!(tree_bytes(a.path()), tree_bytes(b.path()));
}

#[test]
fn synth_dataset_errors() {
    let dir = tempfile::tempdir().unwrap();
    let zero = SynthConfig { frames: 0, ..SynthConfig::default() };
    assert!(matches!(synth_dataset(&zero, dir.path()), Err(SynthError::NoFrames)));
    let devs = vec![DeviceProfile::ideal(1, Family::ComboChipA), DeviceProfile::ideal(1, Family::ComboChipB)];
    let cfg = SynthConfig { frames: 2, ..SynthConfig::default() };
    assert!(matches!(synth_dataset_with_devices(&cfg, &devs, dir.path()), Err(SynthError::DuplicateDevice(1))));
    let none = SynthConfig { scenario_seeds: vec![], ..cfg };
    assert!(matches!(synth_dataset(&none, dir.path()), Err(SynthError::NoScenarios)));
}
