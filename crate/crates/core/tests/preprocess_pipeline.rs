use wiopen_core::data::DomainTag;
use wiopen_core::preprocess::{
    dfs_spectrogram, preprocess_record, ratio_stage, PreprocessConfig, StftParams,
};
use wiopen_core::synth::{gen_trajectory, ground_truth, render_csi, GestureFamily, SceneConfig, TrajectorySpec};

fn push_pull_fixture(phase_noise: bool) -> (SceneConfig, wiopen_core::synth::Trajectory, wiopen_core::data::CsiRecord) {
    let scene = SceneConfig {
        phase_noise,
        ..SceneConfig::default()
    };
    let mut spec = TrajectorySpec::new(GestureFamily::PushPull, [1.5, 0.8, 1.0]);
    spec.scale = 0.4;
    spec.speed = 0.6;
    spec.orientation = -std::f64::consts::FRAC_PI_2;
    let traj = gen_trajectory(&spec, scene.sample_rate, scene.duration, 3).unwrap();
    let rec = render_csi(&scene, &traj, 0, DomainTag::default(), 17).unwrap();
    (scene, traj, rec)
}

#[test]
fn output_is_immune_to_common_phase_noise() {
    let cfg = PreprocessConfig::default();
    let (_, _, noisy) = push_pull_fixture(true);
    let (_, _, clean) = push_pull_fixture(false);
    let a = preprocess_record(&noisy, &cfg).unwrap();
    let b = preprocess_record(&clean, &cfg).unwrap();
    assert_eq!(a.pair, b.pair);
    let diff = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    assert!(diff(a.input.data(), b.input.data()) < 1e-6);
    assert!(diff(a.dfs.data(), b.dfs.data()) < 1e-6);
}

#[test]
fn push_pull_ridge_follows_ground_truth() {
    let cfg = PreprocessConfig::default();
    let (scene, traj, rec) = push_pull_fixture(true);
    let ratio = ratio_stage(&rec, &cfg, true).unwrap();
    let gt = ground_truth(&scene, &traj, ratio.pair.0).unwrap();
    for nfft in [256, 1000] {
        let p = StftParams { nfft, ..cfg.stft };
        let s = dfs_spectrogram(&ratio, &p).unwrap();
        let bin = s.freq_axis[1] - s.freq_axis[0];
        let peaks = s.peak_frequencies();
        let mut hits = 0;
        for (f, peak) in peaks.iter().enumerate() {
            let center = (f * p.hop + p.window_len / 2).min(gt.dfs_track.len() - 1);
            let truth = gt.dfs_track[center];
            if ((peak - truth) / bin).abs() <= 2.0 {
                hits += 1;
            }
        }
        let frac = hits as f64 / peaks.len() as f64;
        assert!(frac >= 0.9, "nfft {nfft}: {hits}/{} frames on the ridge", peaks.len());
    }
}
