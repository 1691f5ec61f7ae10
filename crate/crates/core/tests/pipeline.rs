use promptgrad_core::embedding::MockEncoder;
use promptgrad_core::gateway::mock::{MockProvider, MockTask, SimulatedTask};
use promptgrad_core::gateway::template::TemplateSet;
use promptgrad_core::gateway::{Completer, Gateway};
use promptgrad_core::optimizer::{run, RunConfig, Services};
use promptgrad_core::prompt::LabeledExample;
use promptgrad_core::tasks::GatewayPredictor;

const PROMPT: &str = "Decide whether the review is positive or negative.";

fn split(n: usize, offset: usize) -> Vec<LabeledExample> {
    (offset..offset + n)
        .map(|i| {
            let label = if i % 3 == 0 { "negative" } else { "positive" };
            LabeledExample::new(format!("review {i}: the product was {label} in my view"), label).unwrap()
        })
        .collect()
}

fn simulated(train: &[LabeledExample], dev: &[LabeledExample]) -> MockTask {
    MockTask::Simulated(SimulatedTask::new(
        train
            .iter()
            .chain(dev)
            .map(|e| (e.input.as_str(), e.gold_label.as_str())),
    ))
}

#[test]
fn mock_run_improves_and_replays() {
    let train = split(40, 0);
    let dev = split(40, 1000);
    let config = RunConfig {
        iterations: 5,
        ..Default::default()
    };
    let go = || {
        let gw = Gateway::new(
            MockProvider::new(3).with_task(simulated(&train, &dev)),
            TemplateSet::builtin(),
        );
        let enc = MockEncoder::new(3);
        let vocab = ["positive", "negative"].iter().map(|s| s.to_string()).collect();
        let pred = GatewayPredictor::new(&gw, vocab);
        let services = Services {
            completer: &gw,
            encoder: &enc,
            predictor: &pred,
            provider_id: "mock:3",
        };
        let report = run(&config, PROMPT, &train, &dev, &services).unwrap();
        (report, gw.stats())
    };
    let (a, _) = go();
    let (b, _) = go();
    assert_eq!(a, b);
    println!("{}", a.summary());
    for r in &a.iterations {
        println!(
            "it {} kept {} gen {} filtered {} calls {:?}",
            r.iteration, r.candidates_kept, r.candidates_generated, r.candidates_filtered, r.calls
        );
    }
    assert!(a.best_score.value() >= a.initial_score.value());
}
