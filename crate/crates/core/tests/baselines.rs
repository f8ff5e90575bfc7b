use std::sync::Arc;

use apmimo::autoprecoder::Message;
use apmimo::baselines::{run_baseline_chain, train_dpd, BaselineFrontEnd, BaselineKind, DpdConfig, QamConstellation};
use apmimo::channel::sample_channel;
use apmimo::evaluation::{run_sweep, Scheme, SweepModels, SweepSpec, SystemSpec};
use apmimo::pa::{PaParams, PaSetup};
use apmimo::precoding::zf_precoder;
use apmimo::rng::{stream_rng, Stream};
use num_complex::Complex64;

#[test]
fn dpd_never_loses_to_the_uncorrected_pa() {
    let pa = PaSetup::new(PaParams::rapp_3gpp_nr());
    let dpd = train_dpd(&pa, 3.0, 16, &DpdConfig::default()).unwrap();
    let spec = SweepSpec {
        schemes: vec![Scheme::NoCorrection, Scheme::ZfDpd],
        snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0],
        ibo_db: vec![3.0],
        channels_per_point: 5000,
        seed: 12,
        ..SweepSpec::default()
    };
    let system = SystemSpec { antennas: 16, users: 4, order: 16, pa, gain_compensation: true, mp_order: 5 };
    let models = SweepModels { dpds: vec![(3.0, Arc::new(dpd))], ..SweepModels::default() };
    let result = run_sweep(&spec, &system, &models).unwrap();
    for &snr in &spec.snr_db {
        let raw = result.get(Scheme::NoCorrection, snr, 3.0).unwrap();
        let dpd = result.get(Scheme::ZfDpd, snr, 3.0).unwrap();
        assert!(dpd.ser <= raw.ser || dpd.overlaps(raw), "{snr} dB: {dpd:?} vs {raw:?}");
    }
}

#[test]
fn noiseless_linear_chain_is_error_free() {
    let pa = PaSetup::new(PaParams::rapp_3gpp_nr());
    let amp = pa.ideal_amplifier(1.0, 32).unwrap();
    let qam = QamConstellation::new(16).unwrap();
    let front = BaselineFrontEnd { kind: BaselineKind::Linear, amplifier: &amp, dpd: None };
    let mut rng = stream_rng(1, Stream::TestChannel, &[]);
    for trial in 0..50u64 {
        let ch = sample_channel(4, 32, 1, &mut rng).unwrap();
        let precoder = zf_precoder(&ch).unwrap();
        let messages: Vec<Message> = (0..4).map(|u| Message::new(((trial as usize * 7 + u * 5) % 16) + 1, 16).unwrap()).collect();
        let noise = vec![Complex64::new(0.0, 0.0); 4];
        let decoded = run_baseline_chain(&front, &qam, ch.matrix(), &precoder, &messages, &noise).unwrap();
        let sent: Vec<usize> = messages.iter().map(Message::index).collect();
        assert_eq!(decoded, sent);
    }
}
