use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use glossa_core::gateway::parse_term_list;
use glossa_core::ingest::{chunk_document, ScaledWordCounter, SourceDocument};
use glossa_core::jargon::{JargonEntry, JargonStore};
use glossa_core::retriever::{ChunkKind, ChunkRef, EmbeddingVector, VectorIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vector(rng: &mut ChaCha8Rng, dims: usize) -> EmbeddingVector {
    EmbeddingVector::new((0..dims).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn top_k(c: &mut Criterion) {
    let mut group = c.benchmark_group("top_k");
    for n in [1_000, 10_000] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut index = VectorIndex::new(256).unwrap();
        for i in 0..n {
            let v = random_vector(&mut rng, 256);
            index.insert(ChunkRef::new("doc", i as u32, ChunkKind::Original), v).unwrap();
        }
        let query = random_vector(&mut rng, 256);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| index.top_k(black_box(&query), 5).unwrap())
        });
    }
    group.finish();
}

fn chunker(c: &mut Criterion) {
    let text = (0..400)
        .map(|p| (0..120).map(|w| format!("word{w}")).collect::<Vec<_>>().join(" ") + &format!(" end{p}."))
        .collect::<Vec<_>>()
        .join("\n\n");
    let doc = SourceDocument::new("bench", text).unwrap();
    c.bench_function("chunk_document 48k words", |b| {
        b.iter(|| chunk_document(black_box(&doc), 4000, &ScaledWordCounter::default()).unwrap())
    });
}

fn parser(c: &mut Criterion) {
    let replies = [
        "[\"ARI\", \"MI\", \"MUBO\", \"PIOF\"]",
        "[\"IE\", \"Internet Explorer\"]\n\nPlease let me know if you need anything else.</s>",
        "[\u{201c}SU\u{201d}, \u{201c}SF\u{201d}]</s>",
    ];
    c.bench_function("parse_term_list", |b| {
        b.iter(|| {
            for r in &replies {
                black_box(parse_term_list(black_box(r)).unwrap());
            }
        })
    });
}

fn lookup(c: &mut Criterion) {
    let store = JargonStore::in_memory().unwrap();
    for i in 0..5_000 {
        let ctx = if i % 2 == 0 { "nand-design" } else { "finance" };
        store
            .upsert_entry(JargonEntry::new(format!("T{i}"), ctx, format!("Term {i}"), ""))
            .unwrap();
    }
    let terms = ["T10", "T2001", "T4998", "MISSING", "T77"];
    c.bench_function("dictionary lookup 5 terms of 5000", |b| {
        b.iter(|| store.lookup(black_box(&terms), "nand-design").unwrap())
    });
}

criterion_group!(benches, top_k, chunker, parser, lookup);
criterion_main!(benches);
