//! The files under `templates/` must match the built-in prompt wording.
//! Set `RISKFUSION_BLESS_TEMPLATES=1` to regenerate them.

use std::path::PathBuf;

use riskfusion::extract::{shipped_template_text, TemplateSet};
use riskfusion_core::prompt::{FIRST_PERSON_VERSION, SUMMARY_VERSION};
use riskfusion_core::{Language, TaskKind};

fn templates_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("templates")
}

#[test]
fn shipped_templates_match_builtins() {
    let bless = std::env::var_os("RISKFUSION_BLESS_TEMPLATES").is_some();
    for version in [FIRST_PERSON_VERSION, SUMMARY_VERSION] {
        for task in TaskKind::TEXT {
            for lang in [Language::Zh, Language::En] {
                let path = TemplateSet::file_path(&templates_dir(), task, lang, version);
                let expected = shipped_template_text(task, lang, version).unwrap();
                if bless {
                    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
                    std::fs::write(&path, &expected).unwrap();
                }
                let actual = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                assert_eq!(actual, expected, "{}", path.display());
            }
        }
    }
}

#[test]
fn loaded_templates_render_like_builtins() {
    let from_dir = TemplateSet::from_dir(templates_dir());
    let builtin = TemplateSet::builtin();
    let t = riskfusion_core::Transcript {
        subject_id: "S1".into(),
        task: TaskKind::ER,
        language: Language::Zh,
        text: "我有时候会哭".into(),
        provider_id: "file".into(),
    };
    for lang in [Language::Zh, Language::En] {
        let a = from_dir.get(TaskKind::ER, lang, FIRST_PERSON_VERSION).unwrap().render(&t).unwrap();
        let b = builtin.get(TaskKind::ER, lang, FIRST_PERSON_VERSION).unwrap().render(&t).unwrap();
        assert_eq!(a, b);
    }
}
