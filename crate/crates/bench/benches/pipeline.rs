use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use deskbot_bench::{network, random_batch};
use deskbot_core::datakit::{Collector, CollectConfig};
use deskbot_core::firmware::{parse_line, Message};
use deskbot_core::nn::{Adam, AdamConfig, Graph, Mode};
use deskbot_core::sim::route::builtin_route;
use deskbot_core::sim::{render_camera, BodyParams, CameraConfig, World};

fn train_step(c: &mut Criterion) {
    let mut net = network(128, 48);
    let mut opt = Adam::new(AdamConfig::default(), &net.params);
    let (img, cmd, targets) = random_batch(&net.arch, 64, 1);
    c.bench_function("train_step_128x48_b64", |b| {
        b.iter(|| {
            let mut g = Graph::new(&net.params, Mode::Train { seed: 3 });
            let xi = g.input(img.clone(), false);
            let xc = g.input(cmd.clone(), false);
            let out = net.build(&mut g, xi, xc).unwrap();
            let loss = g.policy_loss(out, &targets, 0.25).unwrap();
            let grads = g.backward(loss);
            let updates = g.take_updates();
            drop(g);
            net.params.apply_updates(updates);
            opt.update(&mut net.params, &grads.params).unwrap();
        })
    });
}

fn inference(c: &mut Criterion) {
    for (w, h) in [(128, 48), (256, 96)] {
        let net = network(w, h);
        let (img, cmd, _) = random_batch(&net.arch, 1, 2);
        c.bench_function(&format!("inference_{w}x{h}"), |b| {
            b.iter(|| net.forward(black_box(img.clone()), cmd.clone(), Mode::Eval).unwrap())
        });
    }
}

fn render(c: &mut Criterion) {
    let route = builtin_route("R1").unwrap();
    let seg = &route.segments[0];
    let world = World::new(route.grid_for(0), seg.start, BodyParams::default(), 0);
    let cam = CameraConfig::with_size(256, 96);
    c.bench_function("render_256x96", |b| b.iter(|| render_camera(black_box(&world), &cam)));
}

fn collect_tick(c: &mut Criterion) {
    let route = builtin_route("R1").unwrap();
    let cfg = CollectConfig {
        minutes: 10.0,
        ..Default::default()
    };
    c.bench_function("collect_tick", |b| {
        b.iter_batched(
            || {
                let dir = tempfile::tempdir().unwrap();
                let col = Collector::new(&route, &cfg, dir.path()).unwrap();
                (dir, col)
            },
            |(dir, mut col)| {
                for _ in 0..20 {
                    col.step().unwrap();
                }
                drop(col);
                dir
            },
            BatchSize::PerIteration,
        )
    });
}

fn serial(c: &mut Criterion) {
    let lines: Vec<Vec<u8>> = [
        Message::Control { left: -200, right: 37 },
        Message::Indicator { left: true, right: false },
        Message::Status {
            millivolts: 11_800,
            ticks_l: 123_456,
            ticks_r: 123_001,
            sonar_cm: 87,
        },
    ]
    .iter()
    .map(|m| m.to_line())
    .collect();
    c.bench_function("parse_line", |b| {
        b.iter(|| {
            for l in &lines {
                black_box(parse_line(black_box(l)).unwrap());
            }
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = train_step, inference, render, collect_tick, serial
}
criterion_main!(benches);
