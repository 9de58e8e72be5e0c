//! Wire-protocol conformance of the NDJSON oracle client.
//!
//! Each transcript in `testdata/oracle` alternates server lines (`< `) and the
//! exact bytes the client must send (`> `). A scripted TCP server replays it and
//! fails the exchange on any byte difference.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use latent_steer::oracle::{Oracle, RemoteOracle};
use latent_steer::{Error, TransportError};

fn transcript(name: &str) -> Vec<(char, String)> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/testdata/oracle").join(name);
    std::fs::read_to_string(&path)
        .unwrap()
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            let (dir, body) = l.split_at(2);
            (dir.chars().next().unwrap(), body.to_owned())
        })
        .collect()
}

/// Replays a transcript; the join handle yields the first mismatch, if any.
fn serve(name: &str) -> (String, JoinHandle<Option<String>>) {
    let script = transcript(name);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("tcp://{}", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut writer = stream;
        for (dir, body) in script {
            if dir == '<' {
                writer.write_all(body.as_bytes()).unwrap();
                writer.write_all(b"\n").unwrap();
                writer.flush().unwrap();
            } else {
                let mut got = String::new();
                if reader.read_line(&mut got).unwrap() == 0 {
                    return Some(format!("client hung up before sending {body}"));
                }
                if got.trim_end_matches('\n') != body {
                    return Some(format!("expected {body}\n     got {}", got.trim_end()));
                }
            }
        }
        // hold the socket open until the client is done
        let mut rest = String::new();
        let _ = reader.read_line(&mut rest);
        None
    });
    (addr, handle)
}

fn connect(addr: &str) -> RemoteOracle {
    RemoteOracle::connect(addr, Duration::from_secs(5)).unwrap()
}

fn finish(oracle: RemoteOracle, handle: JoinHandle<Option<String>>) {
    drop(oracle);
    if let Some(msg) = handle.join().unwrap() {
        panic!("transcript mismatch: {msg}");
    }
}

const S: [f64; 2] = [0.5, -1.0];

#[test]
fn single_age_request() {
    let (addr, h) = serve("single_age.ndjson");
    let o = connect(&addr);
    assert_eq!(o.dim(), 2);
    assert_eq!(o.feature_dim(), 3);
    assert_eq!(o.age(&S).unwrap(), 34.2);
    finish(o, h);
}

#[test]
fn batched_age_preserves_order() {
    let (addr, h) = serve("batched_age.ndjson");
    let o = connect(&addr);
    let b: [&[f64]; 2] = [&S, &[0.25, 2.0]];
    assert_eq!(o.ages(&b).unwrap(), vec![34.2, 51.0]);
    finish(o, h);
}

#[test]
fn identity_single_and_batched() {
    let (addr, h) = serve("identity.ndjson");
    let o = connect(&addr);
    assert_eq!(o.handshake().ops, vec!["age", "identity", "generate"]);
    assert_eq!(o.identity(&S).unwrap(), vec![0.1, 0.2, 0.3]);
    let b: [&[f64]; 2] = [&S, &[0.0, 0.0]];
    assert_eq!(o.identities(&b).unwrap(), vec![vec![0.1, 0.2, 0.3], vec![0.0, 0.0, 1e-300]]);
    finish(o, h);
}

#[test]
fn server_error_is_surfaced_and_connection_survives() {
    let (addr, h) = serve("unsupported_op.ndjson");
    let o = connect(&addr);
    match o.raw_call("generate", &S) {
        Err(Error::Transport(TransportError::Server(code))) => assert_eq!(code, "unsupported_op"),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(o.age(&S).unwrap(), 30.0);
    finish(o, h);
}

#[test]
fn stale_responses_are_skipped() {
    let (addr, h) = serve("stale_id.ndjson");
    let o = connect(&addr);
    assert_eq!(o.age(&S).unwrap(), 21.5);
    finish(o, h);
}

#[test]
fn malformed_reply_is_an_error() {
    let (addr, h) = serve("malformed.ndjson");
    let o = connect(&addr);
    assert!(matches!(o.age(&S), Err(Error::Transport(TransportError::Malformed(_)))));
    finish(o, h);
}

#[test]
fn feature_length_must_match_handshake() {
    let (addr, h) = serve("wrong_feature_dim.ndjson");
    let o = connect(&addr);
    assert!(matches!(o.identity(&S), Err(Error::Transport(TransportError::Protocol(_)))));
    finish(o, h);
}

#[test]
fn dimension_checked_before_sending() {
    let (addr, h) = serve("single_age.ndjson");
    let o = connect(&addr);
    assert!(matches!(o.age(&[1.0, 2.0, 3.0]), Err(Error::DimensionMismatch { expected: 2, actual: 3 })));
    // the scripted request still goes through afterwards
    assert_eq!(o.age(&S).unwrap(), 34.2);
    finish(o, h);
}

#[test]
fn handshake_is_validated() {
    for name in ["bad_protocol.ndjson", "missing_op.ndjson"] {
        let (addr, _h) = serve(name);
        match RemoteOracle::connect(&addr, Duration::from_secs(5)) {
            Err(Error::Transport(TransportError::Protocol(_))) => {}
            Err(e) => panic!("{name}: unexpected error {e}"),
            Ok(_) => panic!("{name}: accepted a bad handshake"),
        }
    }
}

#[test]
fn silent_server_times_out() {
    let (addr, _h) = serve("silent.ndjson");
    let o = RemoteOracle::connect(&addr, Duration::from_millis(200)).unwrap();
    assert!(matches!(o.age(&S), Err(Error::Transport(TransportError::Timeout(200)))));
}

#[test]
fn bad_endpoints() {
    assert!(matches!(
        RemoteOracle::connect("udp://x", Duration::from_secs(1)),
        Err(Error::Transport(TransportError::BadEndpoint(_)))
    ));
    let free = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    assert!(matches!(
        RemoteOracle::connect(&format!("tcp://{free}"), Duration::from_secs(1)),
        Err(Error::Transport(TransportError::Connect(_)))
    ));
}

#[test]
fn exec_endpoint_speaks_over_pipes() {
    let script = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/testdata/oracle/echo_server.sh");
    let o = RemoteOracle::connect(&format!("exec:sh {}", script.display()), Duration::from_secs(5)).unwrap();
    for _ in 0..3 {
        assert_eq!(o.age(&S).unwrap(), 42.5);
    }
    assert_eq!(o.identity(&S).unwrap(), vec![1.0, -1.0]);
    assert_eq!(o.age(&S).unwrap(), o.age(&S).unwrap());
}
