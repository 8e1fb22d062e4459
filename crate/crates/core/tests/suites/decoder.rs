// Property checks for the command grammar. Shared between the core
// integration tests and the acceptance runner.

#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use verba_arm_core::command::render_sequence;
use verba_arm_core::{decode_reply, render_command, Command, DecodedReply, MoveTarget, Token};

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

pub fn token() -> impl Strategy<Value = Token> {
    "[a-z][a-z0-9_-]{0,11}".prop_map(|s| Token::new(&s).unwrap())
}

pub fn coordinate() -> impl Strategy<Value = f64> {
    prop_oneof![
        -2.0..2.0f64,
        (-2000i32..2000).prop_map(|v| v as f64 / 1000.0),
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        Just(0.0),
        Just(-0.0),
    ]
}

pub fn command() -> impl Strategy<Value = Command> {
    prop_oneof![
        token().prop_map(|object| Command::Grab { object }),
        token().prop_map(|object| Command::Drop { object }),
        token().prop_map(|waypoint| Command::Move {
            target: MoveTarget::Named { waypoint }
        }),
        (coordinate(), coordinate(), coordinate()).prop_map(|(x, y, z)| Command::Move {
            target: MoveTarget::Cartesian { x, y, z }
        }),
    ]
}

fn decoded(text: &str) -> Result<Vec<Command>, TestCaseError> {
    match decode_reply(text) {
        Ok(DecodedReply::Commands(c)) => Ok(c),
        other => Err(TestCaseError::fail(format!("{text:?} decoded to {other:?}"))),
    }
}

/// `decode(render(c)) == [c]` for single commands.
pub fn round_trip(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&command(), |cmd| {
            let text = render_command(&cmd);
            prop_assert_eq!(decoded(&text)?, vec![cmd]);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// Prose filler that can never contain or complete a command.
fn filler() -> impl Strategy<Value = String> {
    "[A-Za-z0-9 ,.!?:;'()-]{0,24}"
}

/// Commands interleaved with prose come back in textual order.
pub fn order_preservation(cases: u32) -> Result<(), String> {
    let strategy = prop::collection::vec(command(), 2..8)
        .prop_shuffle()
        .prop_flat_map(|cmds| {
            let n = cmds.len();
            (Just(cmds), prop::collection::vec(filler(), n + 1), prop::collection::vec(any::<bool>(), n))
        });
    runner(cases)
        .run(&strategy, |(cmds, fill, lower)| {
            let mut text = fill[0].clone();
            for (i, cmd) in cmds.iter().enumerate() {
                let mut rendered = render_command(cmd);
                if lower[i] {
                    rendered = rendered.to_lowercase();
                }
                text.push(' ');
                text.push_str(&rendered);
                text.push(' ');
                text.push_str(&fill[i + 1]);
            }
            prop_assert_eq!(decoded(&text)?, cmds.clone());
            prop_assert_eq!(decoded(&render_sequence(&cmds))?, cmds);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// Strings biased toward the grammar's own alphabet.
fn grammar_noise() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop_oneof![
            Just("Grab".to_string()),
            Just("move".to_string()),
            Just("DROP".to_string()),
            Just("[".to_string()),
            Just("]".to_string()),
            Just(",".to_string()),
            Just(" ".to_string()),
            Just("\n".to_string()),
            "[0-9.+eE-]{1,6}",
            "[a-z_]{1,5}",
            any::<char>().prop_map(String::from),
        ],
        0..24,
    )
    .prop_map(|parts| parts.concat())
}

/// The decoder returns a value (never panics) for arbitrary input, and a
/// conversation reply echoes the input minus one trailing newline.
pub fn fuzz_totality(cases: u32) -> Result<(), String> {
    let strategy = prop_oneof![any::<String>(), grammar_noise()];
    runner(cases)
        .run(&strategy, |text| {
            match decode_reply(&text) {
                Ok(DecodedReply::Conversation(body)) => {
                    prop_assert!(text.starts_with(&body));
                    prop_assert!(text.len() - body.len() <= 2);
                }
                Ok(DecodedReply::Commands(c)) => prop_assert!(!c.is_empty()),
                Err(_) => {}
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}
