//! Run-group names: `{k}s`, `cossim-{k}s`, `proxy-prior-{k}s`, `prior-{y}s-prompt-{k}s` and friends.

use crate::sampling::{PriorKind, SamplingScheme, SchemeKind};

/// `25s`, `cossim-5s`, `proxy-prior-15s-sedl`, `random-prior-5s`, `prior-5s-prompt-15s`,
/// `random-prior-5s-prompt-15s`, `0s-prompt-15s`, `0s`, with `-traindev` appended for
/// runs that also cover the demonstration pool.
pub fn run_name(scheme: &SamplingScheme, k: usize, traindev: bool) -> String {
    let mut name = match scheme.kind {
        SchemeKind::Icl => format!("{k}s"),
        SchemeKind::Cossim => format!("cossim-{k}s"),
        SchemeKind::PriorIndependent => format!("proxy-prior-{k}s"),
        SchemeKind::PriorUniform => format!("random-prior-{k}s"),
        SchemeKind::ZeroShot => "0s".to_owned(),
        SchemeKind::PriorPrompt => match scheme.label_source {
            Some(src) => match src.kind {
                PriorKind::Independent => format!("prior-{}s-prompt-{k}s", src.k),
                PriorKind::Uniform => format!("random-prior-{}s-prompt-{k}s", src.k),
                PriorKind::ZeroShot => format!("0s-prompt-{k}s"),
            },
            None => format!("prompt-{k}s"),
        },
    };
    if scheme.sedl {
        name.push_str("-sedl");
    }
    if traindev {
        name.push_str("-traindev");
    }
    name
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::LabelSource;

    fn prompt(kind: PriorKind, y: usize, sedl: bool) -> SamplingScheme {
        SamplingScheme {
            kind: SchemeKind::PriorPrompt,
            sedl,
            label_source: Some(LabelSource { kind, k: y, sedl }),
        }
    }

    #[test]
    fn canonical_names() {
        assert_eq!(run_name(&SamplingScheme::plain(SchemeKind::Icl), 25, false), "25s");
        let sedl = SamplingScheme {
            sedl: true,
            ..SamplingScheme::plain(SchemeKind::PriorIndependent)
        };
        assert_eq!(run_name(&sedl, 15, false), "proxy-prior-15s-sedl");
        assert_eq!(run_name(&prompt(PriorKind::Independent, 5, false), 15, false), "prior-5s-prompt-15s");
        assert_eq!(run_name(&prompt(PriorKind::ZeroShot, 0, false), 15, false), "0s-prompt-15s");
        assert_eq!(run_name(&SamplingScheme::plain(SchemeKind::ZeroShot), 0, true), "0s-traindev");
        assert_eq!(run_name(&SamplingScheme::plain(SchemeKind::Cossim), 5, false), "cossim-5s");
        assert_eq!(run_name(&SamplingScheme::plain(SchemeKind::PriorUniform), 5, false), "random-prior-5s");
        assert_eq!(
            run_name(&prompt(PriorKind::Independent, 5, true), 15, false),
            "prior-5s-prompt-15s-sedl"
        );
    }
}
