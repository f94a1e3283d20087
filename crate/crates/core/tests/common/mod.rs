#![allow(dead_code)]

use std::sync::OnceLock;
use std::thread;

use kgtrade_core::blindsig::BlindKeyPair;
use kgtrade_core::kg::{Iri, KnowledgeGraph, Literal, Statement};
use kgtrade_core::net::{loopback_pair, LoopbackChannel};
use kgtrade_core::protocol::{
    run_buyer, run_seller, AlwaysContinue, BuyerOptions, BuyerOutcome, Decider, SellerOptions, SellerOutcome,
    SellerSecrets, SessionConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn key(seed: u64) -> BlindKeyPair {
    BlindKeyPair::generate(2048, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap()
}

pub fn keys() -> &'static (BlindKeyPair, BlindKeyPair) {
    static KEYS: OnceLock<(BlindKeyPair, BlindKeyPair)> = OnceLock::new();
    KEYS.get_or_init(|| (key(0xb11d), key(0x07)))
}

pub fn secrets(seed: u64) -> SellerSecrets {
    let (blind, ot) = keys();
    SellerSecrets::with_keys(blind.clone(), ot.clone(), &mut ChaCha20Rng::seed_from_u64(seed))
}

/// Statement `i` of a shared universe: 13 subjects, 4 predicates, objects
/// alternating between resources and literals.
pub fn statement(i: usize) -> Statement {
    let subject = Iri::new(format!("http://ex.org/s{}", i % 13)).unwrap();
    let predicate = Iri::new(format!("http://ex.org/p{}", i % 4)).unwrap();
    if i % 3 == 0 {
        Statement::new(subject, predicate, Literal::plain(format!("v{}", i / 3 % 17)))
    } else {
        Statement::new(subject, predicate, Iri::new(format!("http://ex.org/o{i}")).unwrap())
    }
}

pub fn graph(range: std::ops::Range<usize>) -> KnowledgeGraph {
    range.map(statement).collect()
}

pub fn small_config() -> SessionConfig {
    SessionConfig {
        parts: 4,
        buy: 2,
        ..SessionConfig::default()
    }
}

/// One session over an in-process loopback pair.
pub fn run_pair(
    config: &SessionConfig,
    seller_graph: &KnowledgeGraph,
    buyer_graph: &KnowledgeGraph,
    secrets: SellerSecrets,
    seller_options: SellerOptions,
    mut seller_decider: impl Decider + Send + 'static,
    buyer_decider: &mut dyn Decider,
    buyer_options: &BuyerOptions,
) -> (SellerOutcome, BuyerOutcome) {
    let (seller_end, buyer_end): (LoopbackChannel, LoopbackChannel) = loopback_pair();
    let seller_config = config.clone();
    let seller_graph = seller_graph.clone();
    let seller = thread::spawn(move || {
        run_seller(
            &seller_config,
            &seller_graph,
            &secrets,
            seller_end,
            &mut seller_decider,
            &seller_options,
        )
    });
    let buyer = run_buyer(config, buyer_graph, buyer_end, buyer_decider, buyer_options);
    (seller.join().unwrap(), buyer)
}

pub fn honest(
    config: &SessionConfig,
    seller_graph: &KnowledgeGraph,
    buyer_graph: &KnowledgeGraph,
    seed: u64,
) -> (SellerOutcome, BuyerOutcome) {
    run_pair(
        config,
        seller_graph,
        buyer_graph,
        secrets(seed),
        SellerOptions::default(),
        AlwaysContinue,
        &mut AlwaysContinue,
        &BuyerOptions {
            seed: Some(seed),
            ..BuyerOptions::default()
        },
    )
}
