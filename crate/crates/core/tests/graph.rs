use hnn::activations::Activation;
use hnn::conversion::C2R;
use hnn::graph::*;
use hnn::layers::{Domain, Module, OptimizerKind};
use hnn::train::{evaluate, train, Control, Dataset, Targets, TrainConfig};
use hnn::{Error, Session, Tape, Tensor, C64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn act(name: &str) -> Activation {
    name.parse().unwrap()
}

fn path(kind: PathKind, c: usize) -> PathSpec {
    match kind {
        PathKind::RR => PathSpec::new(c, 3, act("ReLU")),
        PathKind::RC => PathSpec::new(2 * c, 3, act("Tanh")).with_conversion("Cartesian"),
        PathKind::CR => PathSpec::new(c, 3, act("cTanh")).with_conversion("Mag"),
        PathKind::CC => PathSpec::new(c, 3, act("cReLU")),
    }
}

fn spec_from(masks: &[u8], head: (bool, bool)) -> NetworkSpec {
    let blocks = masks
        .iter()
        .map(|&m| {
            PathKind::ALL
                .iter()
                .enumerate()
                .filter(|(i, _)| m & (1 << i) != 0)
                .fold(BlockSpec::default(), |b, (_, &k)| b.with(k, path(k, 2)))
        })
        .collect();
    NetworkSpec {
        input: InputSpec { real_channels: 2, complex_channels: 2, conversion: None },
        blocks,
        head: HeadSpec { outputs: 3, real: head.0, complex: head.1, complex_conversion: C2R::Mag },
    }
}

fn params(spec: &NetworkSpec) -> Option<usize> {
    Network::build(spec, 0).ok().map(|n| n.count_parameters().total)
}

fn run(net: &Network, xr: &Tensor, xc: &Tensor, training: bool, seed: u64) -> Tensor {
    let tape = Tape::new();
    let s = Session::new(&tape, training, seed);
    let r = net.spec.input.real_channels > 0;
    let c = net.spec.input.complex_channels > 0;
    net.forward(&s, r.then(|| s.constant(xr.clone())), c.then(|| s.constant(xc.clone())))
        .unwrap()
        .value()
}

fn inputs(seed: u64, batch: usize, len: usize) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = batch * 2 * len;
    let xr = Tensor::real([batch, 2, len], (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let xc = Tensor::complex(
        [batch, 2, len],
        (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect(),
    )
    .unwrap();
    (xr, xc)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pruning_is_idempotent_and_never_grows(
        masks in proptest::collection::vec(1u8..16, 1..5),
        head in prop_oneof![Just((true, false)), Just((false, true)), Just((true, true))],
    ) {
        let spec = spec_from(&masks, head);
        match prune_dependencies(&spec) {
            Ok(pruned) => {
                prop_assert_eq!(prune_dependencies(&pruned).unwrap(), pruned.clone());
                prop_assert!(pruned.total_paths() <= spec.total_paths());
                let after = params(&pruned).expect("pruned spec builds");
                if let Some(before) = params(&spec) {
                    prop_assert!(after <= before);
                }
            }
            Err(e) => prop_assert!(matches!(e, Error::DeadOutput(_)), "{:?}", e),
        }
    }

    #[test]
    fn pruned_network_computes_the_same_function(
        masks in proptest::collection::vec(1u8..16, 1..4),
        seed in 0u64..1000,
    ) {
        let spec = spec_from(&masks, (true, false));
        let Ok(net) = Network::build(&spec, seed) else { return Ok(()); };
        let Ok(pruned) = net.prune() else { return Ok(()); };
        let (xr, xc) = inputs(seed, 2, 8);
        let a = run(&net, &xr, &xc, false, 0);
        let b = run(&pruned, &xr, &xc, false, 0);
        prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }
}

#[test]
fn planted_dead_paths_are_removed() {
    // Real head: the last block's RC and CC outputs feed nothing.
    let spec = spec_from(&[0b1111, 0b1111], (true, false));
    let pruned = prune_dependencies(&spec).unwrap();
    let last: Vec<_> = pruned.blocks[1].paths.keys().copied().collect();
    assert_eq!(last, [PathKind::RR, PathKind::CR]);
    assert_eq!(pruned.blocks[0].paths.len(), 4);
    assert!(params(&pruned).unwrap() < params(&spec).unwrap());

    // Only real data: complex-input paths downstream of nothing complex are cut.
    let mut spec = spec_from(&[0b0101, 0b1111], (true, false));
    spec.input.complex_channels = 0;
    let pruned = prune_dependencies(&spec).unwrap();
    assert_eq!(pruned.blocks[0].paths.keys().copied().collect::<Vec<_>>(), [PathKind::RR]);
    assert_eq!(pruned.blocks[1].paths.keys().copied().collect::<Vec<_>>(), [PathKind::RR]);

    // A fully live network is left alone.
    let live = spec_from(&[0b1111, 0b0101], (true, false));
    assert_eq!(prune_dependencies(&live).unwrap(), live);
}

#[test]
fn complex_head_prunes_real_only_producers() {
    let spec = spec_from(&[0b1111, 0b1111], (false, true));
    let pruned = prune_dependencies(&spec).unwrap();
    assert_eq!(pruned.blocks[1].paths.keys().copied().collect::<Vec<_>>(), [PathKind::RC, PathKind::CC]);
}

#[test]
fn unreachable_head_is_reported() {
    let mut spec = spec_from(&[0b0001], (false, true));
    spec.input.complex_channels = 0;
    assert!(matches!(prune_dependencies(&spec), Err(Error::DeadOutput(_))));
}

#[test]
fn real_only_block_is_a_plain_conv() {
    let spec = spec_from(&[0b0001], (true, false));
    let net = Network::build(&spec, 3).unwrap();
    let (xr, _) = inputs(1, 3, 6);
    let tape = Tape::new();
    let s = Session::eval(&tape);
    let (r, c) = net.blocks[0].forward(&s, Some(s.constant(xr.clone())), None).unwrap();
    assert!(c.is_none());
    let p = net.blocks[0].path(PathKind::RR).unwrap();
    let direct = p.conv.forward(&s, s.constant(xr)).unwrap().relu().unwrap();
    assert_eq!(r.unwrap().value(), direct.value());
}

#[test]
fn complex_only_tanh_block_keeps_conv_phase() {
    let mut spec = spec_from(&[0b1000], (false, true));
    spec.blocks[0].paths.insert(PathKind::CC, PathSpec::new(3, 3, act("cTanh")));
    let net = Network::build(&spec, 4).unwrap();
    let (_, xc) = inputs(2, 2, 6);
    let tape = Tape::new();
    let s = Session::eval(&tape);
    let (r, c) = net.blocks[0].forward(&s, None, Some(s.constant(xc.clone()))).unwrap();
    assert!(r.is_none());
    let conv = net.blocks[0].path(PathKind::CC).unwrap().conv.forward(&s, s.constant(xc)).unwrap().value();
    for (a, b) in c.unwrap().value().complex_data().unwrap().iter().zip(conv.complex_data().unwrap()) {
        assert!((a.arg() - b.arg()).abs() < 1e-12);
    }
}

#[test]
fn cartesian_exit_halves_channels() {
    let spec = spec_from(&[0b0011], (true, true));
    assert_eq!(spec.blocks[0].output_channels().unwrap(), Channels { real: 2, complex: 2 });
    let net = Network::build(&spec, 0).unwrap();
    let (xr, _) = inputs(0, 1, 5);
    let tape = Tape::new();
    let s = Session::eval(&tape);
    let (_, c) = net.blocks[0].forward(&s, Some(s.constant(xr)), None).unwrap();
    assert_eq!(c.unwrap().shape(), [1, 2, 5]);
}

#[test]
fn missing_input_domain_is_an_error() {
    let spec = spec_from(&[0b0100], (true, false));
    let net = Network::build(&spec, 0).unwrap();
    let (xr, _) = inputs(0, 1, 5);
    let tape = Tape::new();
    let s = Session::eval(&tape);
    assert!(net.blocks[0].forward(&s, Some(s.constant(xr)), None).is_err());
}

#[test]
fn dropout_forward_depends_only_on_the_seed() {
    let mut spec = spec_from(&[0b1111, 0b0101], (true, false));
    for p in spec.blocks[0].paths.values_mut() {
        p.optional.dropout = Some(0.5);
        p.optional.norm = true;
    }
    let net = Network::build(&spec, 1).unwrap();
    let (xr, xc) = inputs(5, 4, 8);
    assert_eq!(run(&net, &xr, &xc, true, 17), run(&net, &xr, &xc, true, 17));
    assert_ne!(run(&net, &xr, &xc, true, 17), run(&net, &xr, &xc, true, 18));
    assert_eq!(run(&net, &xr, &xc, false, 17), run(&net, &xr, &xc, false, 18));
}

/// Class = sign of the mean of the first real channel; the complex channels are noise.
fn toy(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = 8;
    let (mut xr, mut xc, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let label = rng.random_range(0..2usize);
        let shift = if label == 1 { 1.0 } else { -1.0 };
        for c in 0..2 {
            for _ in 0..len {
                let noise: f64 = rng.random_range(-0.5..0.5);
                xr.push(if c == 0 { shift + noise } else { noise });
                xc.push(C64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)));
            }
        }
        labels.push(label);
    }
    Dataset::new(
        Some(Tensor::real([n, 2, len], xr).unwrap()),
        Some(Tensor::complex([n, 2, len], xc).unwrap()),
        Targets::Classes { labels, classes: 2 },
    )
    .unwrap()
}

fn toy_spec() -> NetworkSpec {
    let mut spec = spec_from(&[0b1111, 0b0101], (true, false));
    spec.head.outputs = 2;
    spec
}

#[test]
fn hybrid_network_learns_the_toy_task() {
    let (tr, te) = (toy(256, 1), toy(200, 2));
    let mut net = Network::build(&toy_spec(), 0).unwrap();
    let cfg = TrainConfig { lr: 1e-2, epochs: 15, batch_size: 32, optimizer: OptimizerKind::Adam, seed: 0 };
    let report = train(&mut net, &tr, None, Some(&te), &cfg, &mut |_| Control::Continue).unwrap();
    assert!(report.epochs.last().unwrap().train_loss < report.initial_train_loss);
    assert!(report.test.unwrap().accuracy.unwrap() >= 0.99, "{:?}", report.test);
    assert_eq!(report.param_count, net.count_parameters().total);
}

#[test]
fn training_is_deterministic() {
    let data = toy(64, 3);
    let cfg = TrainConfig { lr: 1e-2, epochs: 3, batch_size: 16, optimizer: OptimizerKind::Adam, seed: 4 };
    let run = || {
        let mut net = Network::build(&toy_spec(), 2).unwrap();
        let rep = train(&mut net, &data, Some(&data), None, &cfg, &mut |_| Control::Continue).unwrap();
        (net, rep)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(ra, rb);
    assert_eq!(a, b);
    assert_eq!(evaluate(&a, &data, 7).unwrap(), evaluate(&b, &data, 64).unwrap());
}

#[test]
fn early_stop_callback() {
    let data = toy(32, 5);
    let mut net = Network::build(&toy_spec(), 0).unwrap();
    let cfg = TrainConfig { epochs: 10, ..TrainConfig::default() };
    let rep = train(&mut net, &data, None, None, &cfg, &mut |e| if e.epoch >= 1 { Control::Stop } else { Control::Continue }).unwrap();
    assert!(rep.stopped_early);
    assert_eq!(rep.epochs.len(), 2);
}

#[test]
fn network_round_trips_through_json() {
    let net = Network::build(&toy_spec(), 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("net.json");
    net.save(&p).unwrap();
    let back = Network::load(&p).unwrap();
    assert_eq!(back, net);
    let (xr, xc) = inputs(1, 2, 8);
    assert_eq!(run(&back, &xr, &xc, false, 0), run(&net, &xr, &xc, false, 0));
    assert_eq!(back.params().len(), net.params().len());
    assert!(net.blocks[0].path(PathKind::CC).unwrap().conv.domain == Domain::Complex);
}
