//! End-to-end tests of the subprocess adapter against the echo model binary.

use astraea::mut_adapters::{MutError, MutHandle, MutOptions, MutSpec};
use astraea::oracles::{Task, TaskOutput};

fn echo_spec(timeout_ms: u64) -> MutSpec {
    MutSpec::Subprocess {
        command: vec![env!("CARGO_BIN_EXE_astraea-echo-mut").to_string()],
        timeout_ms,
        max_in_flight: 1,
    }
}

fn handle(timeout_ms: u64) -> MutHandle {
    MutHandle::init(&echo_spec(timeout_ms), &MutOptions::default()).unwrap()
}

#[test]
fn evaluates_each_task_against_the_echo_model() {
    let m = handle(5000);
    assert!(matches!(
        m.evaluate("The cleaner feels enraged.", Task::Sa).unwrap(),
        TaskOutput::Sa { .. }
    ));
    assert!(matches!(
        m.evaluate("The farmer was passing by. He waved.", Task::Coref)
            .unwrap(),
        TaskOutput::Coref { .. }
    ));
    let probes = MutOptions {
        probes: Some(vec!["his".into(), "her".into()]),
        bearer_token: None,
    };
    let m2 = MutHandle::init(&echo_spec(5000), &probes).unwrap();
    let out = m2
        .evaluate("The doctor walked to [MASK] home.", Task::Mlm)
        .unwrap();
    let TaskOutput::Mlm { confidences } = out else {
        panic!()
    };
    assert!(confidences.contains_key("his"));
    assert!(confidences.contains_key("her"));
}

#[test]
fn repeated_queries_are_pure() {
    let m = handle(5000);
    let a = m.evaluate("same text", Task::Sa).unwrap();
    let b = m.evaluate("same text", Task::Sa).unwrap();
    assert_eq!(a, b);
}

#[test]
fn batch_preserves_order_and_isolates_failures() {
    let m = handle(5000);
    let sentences = vec![
        "first sentence".to_string(),
        "please __CRASH__ now".to_string(),
        "third sentence".to_string(),
    ];
    let outs = m.batch_evaluate(&sentences, Task::Sa);
    assert!(outs[0].is_ok());
    assert!(outs[1].is_err());
    assert!(outs[2].is_ok(), "{:?}", outs[2]);
}

#[test]
fn repeated_crashes_poison_the_handle() {
    let m = handle(5000);
    for _ in 0..4 {
        let _ = m.evaluate("please __CRASH__ now", Task::Sa);
    }
    assert!(matches!(
        m.evaluate("anything", Task::Sa).unwrap_err(),
        MutError::Poisoned
    ));
}

#[test]
fn hang_times_out_and_the_next_query_recovers() {
    let m = handle(300);
    let err = m.evaluate("please __SLEEP__ now", Task::Sa).unwrap_err();
    assert!(matches!(err, MutError::Timeout));
    assert!(m.evaluate("awake again", Task::Sa).is_ok());
}
