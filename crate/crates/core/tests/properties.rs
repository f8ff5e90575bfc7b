use num_complex::Complex64;
use proptest::prelude::*;

use apmimo::autodiff::RealTensor;
use apmimo::autoprecoder::{received_samples, ChainOptions, NnModel};
use apmimo::baselines::QamConstellation;
use apmimo::channel::{sample_channel, ChannelRealization};
use apmimo::complexity::{affine, complexity, ComplexityParams, ComplexityScheme};
use apmimo::container::Container;
use apmimo::evaluation::confidence_interval;
use apmimo::linalg::CMatrix;
use apmimo::pa::{PaParams, PaSetup};
use apmimo::precoding::{mp_apply_horner, mp_precoder, zf_precoder};
use apmimo::rng::{stream_rng, Stream};

fn channel(seed: u64, users: usize, antennas: usize) -> ChannelRealization {
    sample_channel(users, antennas, 1, &mut stream_rng(seed, Stream::TestChannel, &[])).unwrap()
}

fn close(a: &[Complex64], b: &[Complex64], tol: f64) -> bool {
    let scale = b.iter().map(|v| v.norm()).fold(1.0, f64::max);
    a.iter().zip(b).all(|(x, y)| (x - y).norm() <= tol * scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn qam_roundtrip_under_small_noise(side in 1u32..4, c in 0usize..64, re in -0.99f64..0.99, im in -0.99f64..0.99) {
        let order = 1usize << (2 * side);
        let qam = QamConstellation::new(order).unwrap();
        let c = c % order + 1;
        let p = qam.modulate(c).unwrap();
        let half = (qam.points().iter().map(|q| q.norm_sqr()).sum::<f64>() / order as f64).sqrt()
            / ((2 * (order - 1)) as f64 / 3.0).sqrt();
        prop_assert_eq!(qam.demodulate(p + Complex64::new(re, im) * half), c);
    }

    #[test]
    fn horner_matches_direct_polynomial(seed in 0u64..1000, users in 1usize..5, extra in 0usize..5, order in 0usize..7) {
        let antennas = users + extra;
        let ch = channel(seed, users, antennas);
        let mut rng = stream_rng(seed, Stream::Data, &[]);
        let mu: Vec<f64> = (0..=order).map(|j| rand::Rng::random_range(&mut rng, -1.0..1.0) / (antennas as f64).powi(j as i32 + 1)).collect();
        let s: Vec<Complex64> = (0..users).map(|_| Complex64::new(rand::Rng::random(&mut rng), rand::Rng::random(&mut rng))).collect();
        let h = ch.matrix();
        let a = h.gram();
        let mut acc = vec![Complex64::new(0.0, 0.0); users];
        let mut power = s.clone();
        for m in &mu {
            acc.iter_mut().zip(&power).for_each(|(v, p)| *v += p * *m);
            power = a.mul_vec(&power);
        }
        let direct = h.adjoint_mul_vec(&acc);
        prop_assert!(close(&mp_apply_horner(h, &mu, &s), &direct, 1e-10));
    }

    #[test]
    fn container_roundtrip_is_bitwise(values in prop::collection::vec(any::<f64>(), 0..40), name in "[a-z.]{1,12}", meta in ".{0,40}") {
        let mut c = Container::new("test", "a = 1\n".into(), meta);
        c.push(name.clone(), RealTensor::new(vec![values.len()], values.clone()).unwrap());
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        let t = back.tensor(&name).unwrap();
        prop_assert_eq!(t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(back.to_bytes(), c.to_bytes());
    }

    #[test]
    fn learned_constellation_has_unit_power(seed in 0u64..500, order in prop::sample::select(vec![2usize, 4, 8, 16, 32]), hidden in 1usize..24) {
        let model = NnModel::new(order, &[hidden], &[hidden], &mut stream_rng(seed, Stream::Init, &[])).unwrap();
        if let Ok(points) = model.constellation() {
            let p = points.iter().map(|v| v.norm_sqr()).sum::<f64>() / order as f64;
            prop_assert!((p - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wilson_interval_brackets_the_estimate(trials in 1u64..100_000, frac in 0.0f64..=1.0) {
        let errors = ((trials as f64) * frac).floor() as u64;
        let (lo, hi) = confidence_interval(errors, trials).unwrap();
        let p = errors as f64 / trials as f64;
        prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
    }

    #[test]
    fn amplifier_is_bounded_and_phase_equivariant(ibo in -3.0f64..10.0, re in -5.0f64..5.0, im in -5.0f64..5.0, theta in 0.0f64..6.3) {
        let setup = PaSetup::new(PaParams::rapp_3gpp_nr());
        let amp = setup.amplifier(ibo, 16).unwrap();
        let x = Complex64::new(re, im);
        let y = amp.amplify_sample(x);
        prop_assert!(y.norm() <= setup.params.v_sat * (1.0 + 1e-12));
        let rot = Complex64::from_polar(1.0, theta);
        let y_rot = amp.amplify_sample(x * rot);
        prop_assert!((y_rot - y * rot).norm() <= 1e-12 * (1.0 + y.norm()));
    }

    #[test]
    fn complexity_totals_are_affine_in_tau(tau in 1u64..500, mt in 1u64..300, mr in 1u64..40, j in 1u64..8) {
        let p = ComplexityParams { antennas: mt, users: mr, tau, mp_order: j, ..ComplexityParams::table1_j5() };
        for scheme in ComplexityScheme::ALL {
            let (intercept, slope) = affine(scheme, &p).unwrap();
            let r = complexity(scheme, &p).unwrap();
            prop_assert_eq!(r.total, intercept + slope * tau);
            prop_assert_eq!(r.total, r.linear_precoder + r.nn + r.update + r.dpd);
        }
    }

    #[test]
    fn users_are_interchangeable(seed in 0u64..1000, users in 2usize..5, extra in 0usize..6, ibo in 0.0f64..6.0, shift in 1usize..4) {
        let antennas = users + extra + 1;
        let ch = channel(seed, users, antennas);
        let perm: Vec<usize> = (0..users).map(|i| (i + shift) % users).collect();
        let h = ch.matrix();
        let permuted = CMatrix::from_fn(users, antennas, |r, c| h.row(perm[r])[c]);
        let ch_p = ChannelRealization::new(permuted.clone(), 1).unwrap();
        let mut rng = stream_rng(seed, Stream::Data, &[1]);
        let s: Vec<Complex64> = (0..users).map(|_| Complex64::new(rand::Rng::random(&mut rng), rand::Rng::random(&mut rng))).collect();
        let s_p: Vec<Complex64> = perm.iter().map(|&i| s[i]).collect();
        let noise = vec![Complex64::new(0.0, 0.0); users];
        let amp = PaSetup::new(PaParams::rapp_3gpp_nr()).amplifier(ibo, antennas).unwrap();
        let options = ChainOptions::default();

        let r = received_samples(&s, h, &zf_precoder(&ch).unwrap(), &amp, &noise, options);
        let r_p = received_samples(&s_p, &permuted, &zf_precoder(&ch_p).unwrap(), &amp, &noise, options);
        let expected: Vec<Complex64> = perm.iter().map(|&i| r[i]).collect();
        prop_assert!(close(&r_p, &expected, 1e-9));

        let mu = [1.0 / antennas as f64, -0.5 / (antennas * antennas) as f64];
        let r = received_samples(&s, h, &mp_precoder(&ch, &mu).unwrap(), &amp, &noise, options);
        let r_p = received_samples(&s_p, &permuted, &mp_precoder(&ch_p, &mu).unwrap(), &amp, &noise, options);
        let expected: Vec<Complex64> = perm.iter().map(|&i| r[i]).collect();
        prop_assert!(close(&r_p, &expected, 1e-9));
    }
}
