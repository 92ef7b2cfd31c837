mod common;

use common::strategies::{apply, mutation, valid_config};
use common::*;
use easey::config::{
    parse_config, parse_config_lax, parse_unchecked, to_json_string, validate, ConfigError,
    EaseyConfig,
};
use proptest::prelude::*;

fn corpus() -> Vec<String> {
    vec![
        read_fixture("lulesh.json"),
        to_json_string(&lulesh_listing()),
        read_fixture("with_data.json"),
    ]
}

/// A parse result is acceptable when it is a typed error, or a config the
/// validator finds no value errors in.
fn well_behaved(result: &Result<EaseyConfig, ConfigError>) -> bool {
    match result {
        Ok(cfg) => validate(cfg)
            .violations
            .iter()
            .all(|v| !v.code.is_value_error()),
        Err(_) => true,
    }
}

/// Every error the checked reader raises is visible to the relaxed path:
/// value errors as validation codes, structural ones as the same error.
fn completeness_holds(text: &str, compat: bool) -> Result<(), TestCaseError> {
    let checked = if compat {
        parse_config_lax(text)
    } else {
        parse_config(text)
    };
    match checked {
        Err(ConfigError::Value { code, .. }) => {
            let cfg = parse_unchecked(text, compat)
                .map_err(|e| TestCaseError::fail(format!("relaxed parse failed: {e}")))?;
            prop_assert!(
                validate(&cfg).codes().contains(&code),
                "{code} not reported"
            );
        }
        Err(e @ ConfigError::Schema { .. }) => {
            prop_assert_eq!(parse_unchecked(text, compat).unwrap_err(), e);
        }
        Err(ConfigError::Syntax { .. }) | Ok(_) => {}
    }
    Ok(())
}

#[test]
fn corpus_round_trips() {
    for text in corpus() {
        let once = parse_config(&text).unwrap();
        let twice = parse_config(&to_json_string(&once)).unwrap();
        assert_eq!(once, twice);
    }
}

#[test]
fn listing_and_strict_fixture_agree() {
    assert_eq!(lulesh_listing(), lulesh());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn serialize_then_parse_is_identity(cfg in valid_config()) {
        let text = to_json_string(&cfg);
        let parsed = parse_config(&text).unwrap();
        prop_assert_eq!(&parsed, &cfg);
        prop_assert_eq!(parse_config(&to_json_string(&parsed)).unwrap(), parsed);
        prop_assert_eq!(parse_config_lax(&text).unwrap(), cfg);
    }

    #[test]
    fn step_order_is_document_order(cfg in valid_config()) {
        let parsed = parse_config(&to_json_string(&cfg)).unwrap();
        for (i, step) in cfg.execution.steps.iter().enumerate() {
            prop_assert_eq!(&parsed.execution.steps[i], step);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn mutated_documents_yield_typed_results(
        cfg in valid_config(),
        muts in proptest::collection::vec(mutation(), 1..4),
    ) {
        let mut text = to_json_string(&cfg);
        for m in &muts {
            text = apply(&text, m);
        }
        for compat in [false, true] {
            let result = if compat { parse_config_lax(&text) } else { parse_config(&text) };
            prop_assert!(well_behaved(&result), "{result:?}");
            completeness_holds(&text, compat)?;
        }
    }
}
