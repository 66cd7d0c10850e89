//! Walks one interview from greeting to decision, including a misheard
//! answer, and prints the final report.
//!
//! cargo run --release --example anamnesis_session

use virtdoc::anamnesis::{advance, render_report, AdjustmentConfig, RawInput, Session, Vocabulary};
use virtdoc::dataset::{generate_synthetic_cohort, FeatureSet};
use virtdoc::pipeline::{train_artifact, TrainOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cohort = generate_synthetic_cohort(2000, 1, false)?;
    let mut opts = TrainOptions::new(FeatureSet::Basic, 1);
    opts.network.epochs = 40;
    let (model, _) = train_artifact(&cohort, &opts)?;

    let script = [
        RawInput::Utterance("hello".into()),
        RawInput::Utterance("woman".into()),
        RawInput::Utterance("female".into()),
        RawInput::Utterance("fifty two".into()),
        RawInput::Frame("W:48.0:47.5".into()),
        RawInput::Frame("U:1720".into()),
        RawInput::Utterance("no".into()),
        RawInput::Utterance("yes".into()),
        RawInput::Utterance("2".into()),
        RawInput::Utterance("1".into()),
    ];
    let vocab = Vocabulary::default();
    let mut session = Session::new("example", AdjustmentConfig::default());
    for (t, raw) in script.iter().enumerate() {
        println!("doctor: {}", session.prompt());
        println!("patient: {raw:?}");
        let input = session.parse_input(raw, &vocab)?;
        session = advance(&session, &input, &model, t as u64)?;
        if session.retry_count() > 0 {
            println!("  (not understood, attempt {})", session.retry_count());
        }
    }
    let report = render_report(&session)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
