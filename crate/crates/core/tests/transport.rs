mod common;

use std::net::TcpListener;
use std::thread;

use common::{graph, honest, secrets, small_config};
use kgtrade_core::net::{
    accept_tcp, accept_tls, connect_tcp, connect_tls, tls_client_config, tls_server_config, Channel, NetError,
};
use kgtrade_core::protocol::{
    run_buyer, run_seller, AlwaysContinue, BuyerOptions, SellerOptions, SessionState, Transcript,
};
use rcgen::{BasicConstraints, CertificateParams, IsCa, KeyPair};

struct Pki {
    ca: String,
    server: (String, String),
    client: (String, String),
}

fn pki() -> Pki {
    let ca_key = KeyPair::generate().unwrap();
    let mut ca_params = CertificateParams::new(Vec::<String>::new()).unwrap();
    ca_params.is_ca = IsCa::Ca(BasicConstraints::Unconstrained);
    let ca = ca_params.self_signed(&ca_key).unwrap();
    let leaf = |name: &str| {
        let key = KeyPair::generate().unwrap();
        let cert = CertificateParams::new(vec![name.to_string()])
            .unwrap()
            .signed_by(&key, &ca, &ca_key)
            .unwrap();
        (cert.pem(), key.serialize_pem())
    };
    Pki {
        server: leaf("localhost"),
        client: leaf("buyer.local"),
        ca: ca.pem(),
    }
}

fn digests(t: &Transcript) -> Vec<(u8, [u8; 32])> {
    t.records().iter().map(|r| (r.tag, r.digest)).collect()
}

#[test]
fn mutual_tls_frames_round_trip() {
    let pki = pki();
    let server_config = tls_server_config(
        pki.server.0.as_bytes(),
        pki.server.1.as_bytes(),
        Some(pki.ca.as_bytes()),
    )
    .unwrap();
    let client_config = tls_client_config(
        pki.ca.as_bytes(),
        Some((pki.client.0.as_bytes(), pki.client.1.as_bytes())),
    )
    .unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = thread::spawn(move || {
        let mut ch = accept_tls(&listener, server_config).unwrap();
        let f = ch.recv_frame().unwrap();
        ch.send_frame(f.tag + 1, &f.payload).unwrap();
        ch.send_frame(9, &[]).unwrap();
    });
    let mut ch = connect_tls(addr, "localhost", client_config).unwrap();
    let payload: Vec<u8> = (0..70_000u32).map(|i| i as u8).collect();
    ch.send_frame(4, &payload).unwrap();
    let echo = ch.recv_frame().unwrap();
    assert_eq!((echo.tag, echo.payload), (5, payload));
    assert!(ch.recv_frame().unwrap().payload.is_empty());
    server.join().unwrap();
}

#[test]
fn client_without_certificate_is_refused_when_required() {
    let pki = pki();
    let server_config = tls_server_config(
        pki.server.0.as_bytes(),
        pki.server.1.as_bytes(),
        Some(pki.ca.as_bytes()),
    )
    .unwrap();
    let client_config = tls_client_config(pki.ca.as_bytes(), None).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = thread::spawn(move || accept_tls(&listener, server_config).map(|_| ()));
    let client = connect_tls(addr, "localhost", client_config).and_then(|mut ch| {
        ch.send_frame(1, b"x")?;
        ch.recv_frame().map(|_| ())
    });
    assert!(server.join().unwrap().is_err() || client.is_err());
}

#[test]
fn wrong_server_name_fails_the_handshake() {
    let pki = pki();
    let server_config = tls_server_config(pki.server.0.as_bytes(), pki.server.1.as_bytes(), None).unwrap();
    let client_config = tls_client_config(pki.ca.as_bytes(), None).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = thread::spawn(move || {
        let _ = accept_tls(&listener, server_config);
    });
    let err = connect_tls(addr, "seller.example", client_config).err().unwrap();
    assert!(matches!(err, NetError::Tls(_) | NetError::Io(_)), "{err}");
    server.join().unwrap();
}

/// Same inputs, same seeds: the socket session yields the loopback
/// transcript byte for byte.
#[test]
fn tcp_and_tls_sessions_match_loopback() {
    let config = small_config();
    let seller_graph = graph(0..70);
    let buyer_graph = graph(35..100);
    let (_, reference) = honest(&config, &seller_graph, &buyer_graph, 21);
    assert_eq!(reference.state, SessionState::Closed);

    let buyer_options = BuyerOptions {
        seed: Some(21),
        ..BuyerOptions::default()
    };

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let (c, g) = (config.clone(), seller_graph.clone());
    let seller = thread::spawn(move || {
        let ch = accept_tcp(&listener).unwrap();
        run_seller(&c, &g, &secrets(21), ch, &mut AlwaysContinue, &SellerOptions::default())
    });
    let tcp = run_buyer(&config, &buyer_graph, connect_tcp(addr).unwrap(), &mut AlwaysContinue, &buyer_options);
    assert_eq!(seller.join().unwrap().state, SessionState::Closed);
    assert_eq!(digests(&tcp.transcript), digests(&reference.transcript));

    let pki = pki();
    let server_config = tls_server_config(pki.server.0.as_bytes(), pki.server.1.as_bytes(), None).unwrap();
    let client_config = tls_client_config(pki.ca.as_bytes(), None).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let (c, g) = (config.clone(), seller_graph.clone());
    let seller = thread::spawn(move || {
        let ch = accept_tls(&listener, server_config).unwrap();
        run_seller(&c, &g, &secrets(21), ch, &mut AlwaysContinue, &SellerOptions::default())
    });
    let ch = connect_tls(addr, "localhost", client_config).unwrap();
    let tls = run_buyer(&config, &buyer_graph, ch, &mut AlwaysContinue, &buyer_options);
    assert_eq!(seller.join().unwrap().state, SessionState::Closed);
    assert_eq!(digests(&tls.transcript), digests(&reference.transcript));
    assert_eq!(tls.meter, reference.meter);
}
