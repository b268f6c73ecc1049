use std::fs;

use selfdebug_core::corpus::{
    corpus_to_jsonl, load_corpus, save_corpus, CorpusError, CorpusFormat, Source, TestCheck,
};

#[test]
fn mbpp_records_become_canonical_problems() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mbpp.jsonl");
    let rows = [
        serde_json::json!({
            "task_id": 11,
            "text": "Write a function to remove first and last occurrence of a given character.",
            "code": "def remove_Occ(s,ch):\r\n    return s",
            "test_list": ["assert remove_Occ(\"hello\",\"l\") == \"heo\""],
            "test_setup_code": "",
            "challenge_test_list": ["assert remove_Occ(\"abcda\",\"a\") == \"bcd\""]
        }),
        serde_json::json!({
            "task_id": 12,
            "text": "Sort a matrix.",
            "code": "def sort_matrix(M):\n    return sorted(M, key=sum)",
            "test_list": ["assert sort_matrix([[1]]) == [[1]]"],
            "test_setup_code": "import math",
        }),
    ];
    let text: String = rows.iter().map(|r| format!("{r}\n")).collect();
    fs::write(&path, text).unwrap();

    let set = load_corpus(&path, CorpusFormat::MbppJsonl).unwrap();
    assert_eq!(set.name, "mbpp");
    assert_eq!(set.len(), 2);
    let p = set.get("mbpp/11").unwrap();
    assert_eq!(p.source, Source::MbppLike);
    assert_eq!(p.entry_point.as_deref(), Some("remove_Occ"));
    assert_eq!(p.tests.len(), 2);
    assert_eq!(p.reference_solutions[0], "def remove_Occ(s,ch):\n    return s");
    let q = set.get("mbpp/12").unwrap();
    assert!(matches!(&q.tests[0].check, TestCheck::Assertion { payload } if payload.starts_with("import math\n")));

    // Canonical round trip is byte-stable.
    let out = dir.path().join("canon.jsonl");
    save_corpus(&set, &out).unwrap();
    let back = load_corpus(&out, CorpusFormat::CanonicalJsonl).unwrap();
    assert_eq!(back.problems, set.problems);
    assert_eq!(corpus_to_jsonl(&back), fs::read_to_string(&out).unwrap());
}

#[test]
fn apps_directories_map_to_assertions_or_io_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let fn_dir = dir.path().join("0001");
    let io_dir = dir.path().join("0002");
    fs::create_dir_all(&fn_dir).unwrap();
    fs::create_dir_all(&io_dir).unwrap();
    fs::create_dir_all(dir.path().join("0003")).unwrap();
    fs::write(fn_dir.join("question.txt"), "Add numbers.\n").unwrap();
    fs::write(
        fn_dir.join("input_output.json"),
        r#"{"fn_name": "add", "inputs": [[1, 2], [[1, "a"], null]], "outputs": [3, true]}"#,
    )
    .unwrap();
    fs::write(fn_dir.join("solutions.json"), r#"["def add(a, b):\n    return a + b"]"#).unwrap();
    fs::write(io_dir.join("question.txt"), "Echo.").unwrap();
    fs::write(
        io_dir.join("input_output.json"),
        r#"{"inputs": ["1 2\n", ["3", "4"]], "outputs": ["3\n", "7"]}"#,
    )
    .unwrap();

    let set = load_corpus(dir.path(), CorpusFormat::AppsDir).unwrap();
    assert_eq!(set.len(), 2);
    let a = set.get("apps/0001").unwrap();
    let payloads: Vec<String> = a
        .tests
        .iter()
        .map(|t| match &t.check {
            TestCheck::Assertion { payload } => payload.clone(),
            other => panic!("{other:?}"),
        })
        .collect();
    assert_eq!(payloads, vec!["assert add(1, 2) == 3", "assert add([1, \"a\"], None) == True"]);
    assert_eq!(a.reference_solutions.len(), 1);
    let b = set.get("apps/0002").unwrap();
    assert!(b.reference_solutions.is_empty());
    assert!(matches!(&b.tests[1].check, TestCheck::IoPair { stdin, expected_stdout } if stdin == "3\n4" && expected_stdout == "7"));
}

#[test]
fn schema_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let good = r#"{"id":"a","description":"d","tests":[{"kind":"assertion","payload":"assert 1"}],"source":"custom"}"#;
    let no_tests = r#"{"id":"b","description":"d","tests":[],"source":"custom"}"#;
    fs::write(&path, format!("{good}\n{no_tests}\n")).unwrap();
    match load_corpus(&path, CorpusFormat::CanonicalJsonl) {
        Err(CorpusError::Schema { line: Some(2), .. }) => {}
        other => panic!("{other:?}"),
    }
    fs::write(&path, format!("{good}\n{good}\n")).unwrap();
    match load_corpus(&path, CorpusFormat::CanonicalJsonl) {
        Err(CorpusError::DuplicateId { id, line: 2, .. }) => assert_eq!(id, "a"),
        other => panic!("{other:?}"),
    }
}
