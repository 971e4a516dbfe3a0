use crate::dataset::{build_view, SentenceView};

pub(crate) fn view_from_rows(
    sentence: &str,
    rows: &[(&str, &str, usize, &str)],
    triple: (&str, &str, &str),
) -> SentenceView {
    build_view(sentence, rows, triple).expect("valid fixture")
}
