use qreduce::baselines::Baseline;
use qreduce::encoder::{read_checkpoint, write_checkpoint, Encoder, EncoderConfig};
use qreduce::querylog::{generate_synthetic, parse_log, split_for_training, write_log, SplitSpec, SynthConfig};
use qreduce::reducer::{evaluate, CoreScorer, QueryReducer, ThresholdReducer};
use qreduce::tokenizer::Vocab;
use qreduce::trainer::{train, DropRateSchedule, TrainConfig, TrainObjective};
use qreduce::Query;

#[test]
fn generate_train_save_and_reload() {
    let corpus = generate_synthetic(&SynthConfig {
        n_sessions: 300,
        seed: 11,
        ..SynthConfig::default()
    })
    .unwrap();
    let split = split_for_training(&corpus.pairs, &SplitSpec { seed: 11, ..SplitSpec::default() }).unwrap();
    assert!(!split.train.is_empty() && !split.test.is_empty());

    let mut tsv = Vec::new();
    write_log(&mut tsv, &split.test).unwrap();
    let (reread, skipped) = parse_log(&tsv[..]).unwrap();
    assert_eq!(skipped, 0);
    assert_eq!(reread, split.test);

    let originals: Vec<Query> = split.train.iter().map(|p| p.original().clone()).collect();
    let vocab = Vocab::build(&originals, 1).unwrap();
    let model = Encoder::init(EncoderConfig {
        hidden: 16,
        layers: 1,
        heads: 2,
        ff: 32,
        ..EncoderConfig::toy(vocab.len(), 60)
    })
    .unwrap();
    let cfg = TrainConfig {
        max_epochs: 1,
        ..TrainConfig::synthetic(TrainObjective::Core)
    };
    let (model, stats) = train(model, &vocab, &split.train, &split.valid, &cfg, &DropRateSchedule::default()).unwrap();
    assert_eq!(stats.epochs.len(), 1);

    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &model).unwrap();
    let loaded = read_checkpoint(&bytes[..]).unwrap();
    let a = ThresholdReducer {
        scorer: CoreScorer::new(&model, &vocab, 60),
        threshold: 0.5,
    };
    let b = ThresholdReducer {
        scorer: CoreScorer::new(&loaded, &vocab, 60),
        threshold: 0.5,
    };
    // Checkpoints store f32, so probabilities move slightly; masks should not.
    let mut same = 0;
    for p in &split.test {
        let q = p.original();
        same += usize::from(a.reduce(q).unwrap() == b.reduce(q).unwrap());
        assert!(b.reduce(q).unwrap().kept() >= 1);
    }
    assert!(same * 10 >= split.test.len() * 9, "{same}/{}", split.test.len());

    let report = evaluate(&a, &split.test).unwrap();
    let baseline = evaluate(&Baseline::Leftmost { n_q: 1 }, &split.test).unwrap();
    assert_eq!(report.overall.n, baseline.overall.n);
    assert!(report.overall.em <= report.overall.acc + 1e-12);
}
