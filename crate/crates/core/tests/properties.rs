use deskbot_core::firmware::{action_to_pwm, parse_line, Mcu, Message};
use deskbot_core::follow::{select_target, servo, FollowGains, FollowState, Track};
use deskbot_core::nn::augment::{self, AugmentConfig, AugmentDraw};
use deskbot_core::nn::loss::sample_loss;
use deskbot_core::nn::tape::{channel_moments, same_padding};
use deskbot_core::nn::{Graph, Mode, ParamStore, Tensor};
use deskbot_core::sim::sensors::{Detection, PERSON_CLASS};
use deskbot_core::sim::{render_camera, BodyParams, CameraConfig, World};
use deskbot_core::sim::route::builtin_route;
use deskbot_core::{Action, Command, Pose};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn message() -> impl Strategy<Value = Message> {
    prop_oneof![
        (-255i16..=255, -255i16..=255).prop_map(|(left, right)| Message::Control { left, right }),
        (any::<bool>(), any::<bool>()).prop_map(|(left, right)| Message::Indicator { left, right }),
        (any::<u32>(), any::<u32>(), any::<u32>(), any::<u32>()).prop_map(|(millivolts, ticks_l, ticks_r, sonar_cm)| {
            Message::Status {
                millivolts,
                ticks_l,
                ticks_r,
                sonar_cm,
            }
        }),
    ]
}

fn detection() -> impl Strategy<Value = Detection> {
    (0.05f64..0.95, 0.1f64..0.9, 0.02f64..0.4, 0.05f64..0.9, 0.0f64..=1.0, prop_oneof![Just(PERSON_CLASS), Just(0u32), Just(2u32)])
        .prop_map(|(cx, cy, w, h, confidence, class)| Detection {
            cx,
            cy,
            w,
            h,
            confidence,
            class,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn parser_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..96)) {
        let mut mcu = Mcu::default();
        let before = mcu.state.clone();
        match mcu.receive(&bytes) {
            Ok(m) => prop_assert_eq!(m.to_line(), bytes),
            Err(_) => prop_assert_eq!(mcu.state, before),
        }
    }

    #[test]
    fn message_roundtrip(m in message()) {
        prop_assert_eq!(parse_line(&m.to_line()), Ok(m));
    }

    #[test]
    fn pwm_is_odd_and_monotone(a in -1.5f64..1.5, b in -1.5f64..1.5) {
        let (l, r) = action_to_pwm(Action { left: a, right: b });
        let (nl, nr) = action_to_pwm(Action { left: -a, right: -b });
        prop_assert_eq!((nl, nr), (-l, -r));
        let (l2, _) = action_to_pwm(Action { left: a.max(b), right: 0.0 });
        let (l1, _) = action_to_pwm(Action { left: a.min(b), right: 0.0 });
        prop_assert!(l1 <= l2);
    }

    #[test]
    fn odometry_partition(deltas in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..40), cut in 0usize..40) {
        let mut whole = Mcu::default();
        let total = deltas.iter().fold((0.0, 0.0), |acc, d| (acc.0 + d.0.abs(), acc.1 + d.1.abs()));
        whole.tick_odometry(total.0, total.1).unwrap();
        let mut parts = Mcu::default();
        let cut = cut.min(deltas.len());
        for (l, r) in &deltas[..cut] {
            parts.tick_odometry(*l, *r).unwrap();
        }
        for (l, r) in &deltas[cut..] {
            parts.tick_odometry(*l, *r).unwrap();
        }
        // summing the magnitudes in a different order may move a boundary by one ulp
        prop_assert!(whole.state.tick_count_l.abs_diff(parts.state.tick_count_l) <= 1);
        prop_assert!(whole.state.tick_count_r.abs_diff(parts.state.tick_count_r) <= 1);
    }

    #[test]
    fn battery_average_stays_in_sample_hull(init in 0.0f64..15.0, readings in proptest::collection::vec(0u32..=1023, 1..60)) {
        let mut mcu = Mcu::default();
        mcu.state.battery_avg = init;
        let (mut lo, mut hi) = (init, init);
        for r in readings {
            let v = mcu.adc_to_volts(r);
            lo = lo.min(v);
            hi = hi.max(v);
            mcu.update_battery(r).unwrap();
            prop_assert!(mcu.state.battery_avg >= lo - 1e-12 && mcu.state.battery_avg <= hi + 1e-12);
        }
    }

    #[test]
    fn same_padding_output_is_ceil(input in 1usize..300, stride in 1usize..5, k in prop_oneof![Just(1usize), Just(3), Just(5)]) {
        let (out, _) = same_padding(input, k, stride);
        prop_assert_eq!(out, input.div_ceil(stride));
    }

    #[test]
    fn augmentation_stays_in_unit_range(seed in any::<u64>(), pixels in proptest::collection::vec(0.0f32..=1.0, 3 * 8 * 4)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = AugmentDraw::sample(&AugmentConfig::default(), &mut rng);
        let mut img = pixels;
        let mut cmd = Command::Left;
        let mut target = [0.7f32, 0.4];
        augment::apply(&mut img, 8, &mut cmd, &mut target, &d);
        prop_assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn confidence_gate(dets in proptest::collection::vec(detection(), 0..8), prior in proptest::option::of(detection()), age in 0u32..12) {
        let state = FollowState {
            target: prior.filter(|d| d.confidence >= 0.5 && d.class == PERSON_CLASS).map(|bbox| Track { bbox, age }),
            gains: FollowGains::default(),
        };
        let next = select_target(&dets, &state);
        if let Some(t) = next.target {
            prop_assert!(t.bbox.confidence >= 0.5);
            prop_assert_eq!(t.bbox.class, PERSON_CLASS);
        }
    }

    #[test]
    fn servo_is_bounded_signed_and_mirror_equivariant(d in detection(), age in 0u32..5) {
        let state = FollowState { target: Some(Track { bbox: d, age }), gains: FollowGains::default() };
        let a = servo(&state);
        prop_assert!(a.left.abs() <= 1.0 && a.right.abs() <= 1.0);
        if d.cx > 0.5 {
            prop_assert!(a.left >= a.right);
        } else if d.cx < 0.5 {
            prop_assert!(a.left <= a.right);
        }
        let m = servo(&state.mirrored());
        prop_assert!((m.left - a.right).abs() < 1e-12 && (m.right - a.left).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn batch_norm_normalizes_in_train_mode(batch in 16usize..40, c in 1usize..6, seed in any::<u64>(), scale in 0.1f64..20.0, shift in -10.0f64..10.0) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::<f64>::new();
        let g = params.push("g", Tensor::filled(&[c], 1.0), true);
        let b = params.push("b", Tensor::zeros(&[c]), true);
        let m = params.push("m", Tensor::zeros(&[c]), false);
        let v = params.push("v", Tensor::filled(&[c], 1.0), false);
        let data: Vec<f64> = (0..batch * 3 * c).map(|_| shift + scale * rng.gen_range(-1.0..1.0)).collect();
        let data_in = data.clone();
        let mut graph = Graph::new(&params, Mode::Train { seed });
        let x = graph.input(Tensor::from_vec(&[batch, 3, c], data).unwrap(), false);
        let y = graph.batch_norm(x, g, b, m, v, 1e-5, 0.99).unwrap();
        let (_, var_in) = channel_moments(&data_in, c);
        let (mean, var) = channel_moments(&graph.value(y).data, c);
        for k in 0..c {
            prop_assert!(mean[k].abs() < 1e-5, "mean {}", mean[k]);
            let expect = var_in[k] / (var_in[k] + 1e-5);
            prop_assert!((var[k] - expect).abs() < 1e-9, "var {} expected {}", var[k], expect);
        }
    }

    #[test]
    fn dropout_rate_and_eval_identity(n in 2000usize..6000, rate in 0.05f64..0.6, seed in any::<u64>()) {
        let params = ParamStore::<f64>::new();
        let data = vec![1.0; n];
        let mut train = Graph::new(&params, Mode::Train { seed });
        let x = train.input(Tensor::from_vec(&[n], data.clone()).unwrap(), false);
        let y = train.dropout(x, rate);
        let zeros = train.value(y).data.iter().filter(|&&v| v == 0.0).count() as f64;
        let sigma = (n as f64 * rate * (1.0 - rate)).sqrt();
        prop_assert!((zeros - n as f64 * rate).abs() <= 3.0 * sigma + 1.0);
        let kept = 1.0 / (1.0 - rate);
        prop_assert!(train.value(y).data.iter().all(|&v| v == 0.0 || (v - kept).abs() < 1e-12));

        let mut eval = Graph::new(&params, Mode::Eval);
        let x = eval.input(Tensor::from_vec(&[n], data.clone()).unwrap(), false);
        let y = eval.dropout(x, rate);
        prop_assert_eq!(&eval.value(y).data, &data);
    }

    #[test]
    fn mirrored_world_renders_mirrored(x in 1.5f64..8.0, dy in -0.5f64..0.5, heading in -0.6f64..0.6) {
        let route = builtin_route("EVAL1").unwrap();
        let seg = &route.segments[0];
        // wall stripes are fixed in world coordinates; shift the map so the
        // mirror axis falls on the stripe lattice
        let mut grid = route.grid_for(0);
        let axis = grid.origin.1 + grid.height as f64 * grid.resolution / 2.0;
        let shift = axis - (axis * 4.0).round() / 4.0;
        grid.origin.1 -= shift;
        let mut world = World::new(grid, seg.start, BodyParams::default(), 1);
        let s = seg.start;
        let (c, sn) = (s.heading.cos(), s.heading.sin());
        world.reset_robot(Pose::new(s.x + x * c - dy * sn, s.y - shift + x * sn + dy * c, s.heading + heading));
        let cam = CameraConfig::with_size(64, 24);
        let direct = render_camera(&world, &cam).mirrored();
        let mirrored = render_camera(&world.mirrored_about_grid_center(), &cam);
        let worst = direct
            .pixels
            .iter()
            .zip(&mirrored.pixels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        prop_assert!(worst < 1e-4, "max pixel difference {worst}");
    }
}

/// Flip invariance and zero-at-identity over 10^5 random samples.
#[test]
fn loss_flip_invariance_and_zero_at_identity() {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100_000 {
        let t = [rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0)];
        let p = [rng.gen_range(-0.5..=1.5), rng.gen_range(-0.5..=1.5)];
        let l = sample_loss::<f64>(t, p, 0.25);
        let lf = sample_loss::<f64>([t[1], t[0]], [p[1], p[0]], 0.25);
        assert_eq!(l.to_bits(), lf.to_bits(), "flip changed the loss at t={t:?} p={p:?}");
        assert_eq!(sample_loss::<f64>(t, t, 0.25), 0.0);
        assert!(l >= 0.0);
    }
}
