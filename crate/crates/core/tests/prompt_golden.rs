//! Rendered prompts compared against checked-in golden files.
//!
//! Set `MHC_BLESS=1` to rewrite the files after an intentional template
//! change.

use std::path::PathBuf;

use mhc_core::corpus::{LabeledExample, TaskDataset};
use mhc_core::promptkit::{build_prompt, select_shots, Element, PromptMode, MAX_SHOTS};
use mhc_core::TaskId;

fn golden(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    if std::env::var_os("MHC_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected =
        std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "{name} differs from golden file");
}

fn shot(task: TaskId, text: &str, label: i64) -> LabeledExample {
    LabeledExample::new(task, text, label).unwrap()
}

const POST: &str = "Finals are next week and I keep waking up at 4am with my heart racing.";

#[test]
fn zero_shot_golden() {
    let p = build_prompt(TaskId::T1, PromptMode::ZeroShot, POST, &[]).unwrap();
    golden("zero_shot_t1.txt", &p.render());
}

#[test]
fn few_shot_golden() {
    let shots = [
        shot(
            TaskId::T3,
            "Had a rough day but talked it through with a friend.",
            0,
        ),
        shot(
            TaskId::T3,
            "Nothing feels worth doing anymore and I can't get out of bed.",
            2,
        ),
    ];
    let p = build_prompt(TaskId::T3, PromptMode::FewShot(2), POST, &shots).unwrap();
    golden("few_shot_t3_k2.txt", &p.render());
}

#[test]
fn element_order() {
    let zero = build_prompt(TaskId::T6, PromptMode::ZeroShot, POST, &[]).unwrap();
    let kinds: Vec<Element> = zero.elements().into_iter().map(|(e, _)| e).collect();
    assert_eq!(
        kinds,
        [
            Element::Context,
            Element::UserText,
            Element::Question,
            Element::Constraint
        ]
    );

    let one = [shot(TaskId::T6, "I am fine.", 1)];
    let few = build_prompt(TaskId::T6, PromptMode::FewShot(1), POST, &one).unwrap();
    let kinds: Vec<Element> = few.elements().into_iter().map(|(e, _)| e).collect();
    assert_eq!(
        kinds,
        [
            Element::Context,
            Element::Examples,
            Element::UserText,
            Element::Question,
            Element::Constraint
        ]
    );

    // Elements appear in the rendered text in the same order.
    let rendered = few.render();
    let mut cursor = 0;
    for (_, text) in few.elements() {
        let at = rendered[cursor..].find(&text).expect("element present") + cursor;
        cursor = at + text.len();
    }
}

fn balanced_train(task: TaskId) -> TaskDataset {
    let spec = task.spec();
    let ex = (0..spec.num_classes())
        .flat_map(|c| {
            (0..6).map(move |i| shot(task, &format!("training post {c}/{i}"), spec.label_of(c)))
        })
        .collect();
    TaskDataset::new(task, ex).unwrap()
}

#[test]
fn shot_counts_and_no_gold_label() {
    for task in TaskId::ALL {
        let train = balanced_train(task);
        let zero = build_prompt(task, PromptMode::ZeroShot, POST, &[])
            .unwrap()
            .render();
        assert!(!zero.contains("Label:"));
        for k in 1..=MAX_SHOTS {
            let shots = select_shots(&train, k, 11).unwrap();
            assert_eq!(shots.len(), k);
            let p = build_prompt(task, PromptMode::FewShot(k), POST, &shots).unwrap();
            let rendered = p.render();
            assert_eq!(rendered.matches("Label:").count(), k, "{task} k={k}");
            assert_eq!(rendered.matches("Example ").count(), k);
            // Nothing label-like follows the post being classified.
            let tail = &rendered[rendered.find(POST).unwrap()..];
            assert!(!tail.contains("Label:"));
            assert_eq!(p.recover_post(&rendered), Some(POST));
        }
    }
}

#[test]
fn prompt_does_not_depend_on_the_gold_label() {
    // The same text labeled differently in the test split yields one prompt:
    // there is no input through which a gold label could enter.
    let a = shot(TaskId::T2, POST, 0);
    let b = shot(TaskId::T2, POST, 1);
    let pa = build_prompt(a.task_id, PromptMode::ZeroShot, &a.text, &[]).unwrap();
    let pb = build_prompt(b.task_id, PromptMode::ZeroShot, &b.text, &[]).unwrap();
    assert_eq!(pa.render(), pb.render());
}
