use proptest::prelude::*;
use wscl::corpus::{self, DescriptionSpec, EntityCategory};
use wscl::langparse::{self, Parser};

fn desk20() -> Vec<EntityCategory> {
    corpus::build_entity_pool("desk20").unwrap()
}

fn spec(nd: usize, nw: usize, seed: u64) -> DescriptionSpec {
    DescriptionSpec {
        num_descriptions: nd,
        target_length_words: nw,
        seed,
        ..Default::default()
    }
}

#[test]
fn generation_is_deterministic() {
    let pool = desk20();
    let a = corpus::generate_corpus(&pool, &spec(20, 10, 3)).unwrap();
    let b = corpus::generate_corpus(&pool, &spec(20, 10, 3)).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn cardinality_equals_requested_density() {
    let pool = desk20();
    for nd in [0, 1, 7, 20, 40] {
        for c in &pool {
            let out = corpus::generate_descriptions(c, &pool, &spec(nd, 10, 0)).unwrap();
            assert_eq!(out.len(), nd);
            let mut texts: Vec<&str> = out.iter().map(|d| d.text.as_str()).collect();
            texts.sort();
            texts.dedup();
            assert_eq!(texts.len(), nd, "duplicate texts for {}", c.name);
        }
    }
}

#[test]
fn default_desk_corpus_size() {
    let pool = desk20();
    let all = corpus::generate_corpus(&pool, &DescriptionSpec::default()).unwrap();
    assert_eq!(pool.len(), 20);
    assert_eq!(all.len(), 400);
}

#[test]
fn avocado_outputs_parse_with_avocado_subject() {
    let pool = desk20();
    let parser = Parser::for_pool(&pool);
    let avocado = corpus::find_category(&pool, "avocado").unwrap();
    let out = corpus::generate_descriptions(avocado, &pool, &spec(20, 10, 7)).unwrap();
    assert_eq!(out.len(), 20);
    for d in out {
        let tree = parser.parse(&d.text).unwrap();
        assert_eq!(tree.subject().head_noun, "avocado");
        assert!(tree.non_subjects().count() >= 1, "{}", d.text);
    }
}

#[test]
fn complexity_is_monotone_in_length() {
    for name in ["desk20", "desk80"] {
        let pool = corpus::build_entity_pool(name).unwrap();
        let parser = Parser::for_pool(&pool);
        let stats: Vec<(f64, f64)> = [6, 8, 10, 12]
            .iter()
            .map(|&nw| {
                let s = corpus::text_stats(&corpus::generate_corpus(&pool, &spec(20, nw, 0)).unwrap(), &parser).unwrap();
                (s.mean_nouns, s.mean_adjectives)
            })
            .collect();
        for w in stats.windows(2) {
            assert!(w[1].0 >= w[0].0, "{name} nouns {stats:?}");
            assert!(w[1].1 >= w[0].1, "{name} adjectives {stats:?}");
        }
    }
}

/// Counts by direct inspection of the generator's spans: one noun phrase per
/// span, every token strictly inside a span other than the determiner and the
/// head noun is an adjective.
#[test]
fn text_stats_agree_with_span_counts() {
    let pool = desk20();
    let parser = Parser::for_pool(&pool);
    let descriptions = corpus::generate_corpus(&pool, &spec(5, 10, 1)).unwrap();
    let stats = corpus::text_stats(&descriptions, &parser).unwrap();
    for (d, counts) in descriptions.iter().zip(&stats.per_description) {
        let tokens: Vec<&str> = d.text.split_whitespace().collect();
        let spans: Vec<(usize, usize)> = std::iter::once(d.subject_span).chain(d.nonsubject_spans.iter().copied()).collect();
        assert_eq!(counts.nouns, spans.len(), "{}", d.text);
        let adjectives: usize = spans
            .iter()
            .map(|&(s, e)| {
                let tree = parser.parse(&d.text).unwrap();
                let phrase = tree.phrases.iter().find(|p| p.span() == (s, e)).unwrap();
                let noun_words = phrase.noun.split_whitespace().count();
                let det = usize::from(langparse::is_determiner(tokens[s]));
                e - s - det - noun_words
            })
            .sum();
        assert_eq!(counts.adjectives, adjectives, "{}", d.text);
    }
}

#[test]
fn text_stats_of_nothing() {
    let s = corpus::text_stats(&[], &Parser::for_pool(&desk20())).unwrap();
    assert_eq!(s.count, 0);
    assert_eq!((s.mean_nouns, s.mean_adjectives), (0.0, 0.0));
}

#[test]
fn whole_corpus_round_trips_through_parser() {
    for name in ["desk20", "desk80"] {
        let pool = corpus::build_entity_pool(name).unwrap();
        let parser = Parser::for_pool(&pool);
        for nw in [6, 8, 10, 12] {
            for d in corpus::generate_corpus(&pool, &spec(20, nw, 11)).unwrap() {
                let tree = parser.parse(&d.text).unwrap_or_else(|e| panic!("{}: {e}", d.text));
                assert_eq!(tree.subject().span(), d.subject_span, "{}", d.text);
                let rest: Vec<_> = tree.non_subjects().map(|p| p.span()).collect();
                assert_eq!(rest, d.nonsubject_spans, "{}", d.text);
                let says_without = d.text.split_whitespace().any(|w| w == "without");
                assert_eq!(langparse::is_absence(&tree), says_without, "{}", d.text);
                assert_eq!(langparse::noun_phrases(&tree).len(), 1 + rest.len());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spans_are_ordered_and_disjoint(seed in any::<u64>(), nw in 4usize..14, cat in 0usize..20) {
        let pool = desk20();
        let parser = Parser::for_pool(&pool);
        for d in corpus::generate_descriptions(&pool[cat], &pool, &spec(3, nw, seed)).unwrap() {
            let tree = parser.parse(&d.text).unwrap();
            let again = parser.parse(&d.text).unwrap();
            prop_assert_eq!(&tree, &again);
            let mut prev_end = 0;
            for p in &tree.phrases {
                prop_assert!(p.start_token >= prev_end && p.end_token > p.start_token);
                prop_assert!(p.end_token <= tree.tokens.len());
                prev_end = p.end_token;
            }
            prop_assert!(tree.phrases[0].is_subject());
            let words: Vec<String> = d.text.split_whitespace().map(str::to_lowercase).collect();
            for p in &tree.phrases {
                prop_assert_eq!(&tree.tokens[p.start_token..p.end_token], &words[p.start_token..p.end_token]);
            }
        }
    }
}
