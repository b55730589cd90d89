use std::path::PathBuf;

use cpc_sim::scenario::{canned, Scenario};

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

/// Set `CPC_BLESS=1` to rewrite the shipped files from the canned builders.
#[test]
fn shipped_files_match_builders() {
    let bless = std::env::var_os("CPC_BLESS").is_some();
    for (name, sc) in canned::all() {
        let path = dir().join(&name);
        let want = sc.to_json_pretty();
        if bless {
            std::fs::create_dir_all(dir()).unwrap();
            std::fs::write(&path, &want).unwrap();
            continue;
        }
        let have = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(have, want, "{name} is stale, rerun with CPC_BLESS=1");
        let loaded = Scenario::load(&path).unwrap();
        assert_eq!(loaded, sc);
        loaded.prepare().unwrap();
    }
}

#[test]
fn parse_errors_carry_a_position() {
    let err = Scenario::from_json("{\n  \"version\": 1,\n  \"name\": 3\n}", "bad.json").unwrap_err();
    let msg = err.to_string();
    assert!(msg.starts_with("bad.json: line 3"), "{msg}");
}

#[test]
fn validation_lists_every_problem() {
    let mut sc = canned::fig1();
    sc.controllers = 1;
    sc.faults.f = 5;
    let err = sc.prepare().unwrap_err().to_string();
    assert!(err.contains("unknown controller"), "{err}");
    assert!(err.contains("f = 5"), "{err}");
}
