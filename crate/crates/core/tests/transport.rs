use std::sync::Arc;

use peipsm_core::encoding::{CwcParams, PbhParams, Pei};
use peipsm_core::he::{HeContext, HeParams};
use peipsm_core::le_hook::{le_decrypt, le_keygen, AuditLog, LeKeyPair};
use peipsm_core::psm::{Decision, SlotSum};
use peipsm_core::registry::{DeviceList, ListKind, Registry};
use peipsm_core::transport::*;
use peipsm_core::Error;
use rand::{rngs::StdRng, RngExt, SeedableRng};

struct Fixture {
    server: Arc<MnoServer>,
    client: UeClient,
    le: LeKeyPair,
}

fn pei(v: u64) -> Pei {
    Pei::new(v).unwrap()
}

fn fixture(seed: u64) -> Fixture {
    let ctx = Arc::new(HeContext::new(HeParams::custom(8, 97, &[40, 40], 40, 0).unwrap()).unwrap());
    let mut rng = StdRng::seed_from_u64(seed);
    let pbh = PbhParams::new(8, 10, [7; 16]).unwrap();
    let cwc = CwcParams::for_modulus(pbh.lambda_bar(), 2, 97).unwrap();
    let black = DeviceList::from_entries(ListKind::Blacklist, [1, 2, 300].map(pei)).unwrap();
    let grey = DeviceList::from_entries(ListKind::Greylist, [4, 500].map(pei)).unwrap();
    let registry = Registry::new(black, grey, &pbh, &cwc).unwrap();
    let server = MnoServer::new(ctx.clone(), &registry, Arc::new(AuditLog::in_memory()), ServerConfig::default()).unwrap();
    let le = le_keygen(&mut rng);
    let keys = ctx.keygen(&mut rng);
    let client = UeClient::new(ctx, keys, pbh, cwc, le.public);
    Fixture {
        server: Arc::new(server),
        client,
        le,
    }
}

fn sample_messages(f: &Fixture) -> Vec<Message> {
    let mut rng = StdRng::seed_from_u64(9);
    let mut blob = |n: usize| (0..n).map(|_| rng.random::<u8>()).collect::<Vec<u8>>();
    vec![
        f.client.setup(),
        Message::VerifyRequest {
            query: blob(1000),
            le_ct: blob(56),
        },
        Message::MaskedResponse {
            black: blob(300),
            grey: Vec::new(),
        },
        Message::SumReport {
            black: SlotSum(u64::MAX),
            grey: SlotSum(17),
        },
        Message::DecisionNotice(Decision::NotListed),
        Message::DecisionNotice(Decision::Listed(ListKind::Blacklist)),
        Message::DecisionNotice(Decision::Listed(ListKind::Greylist)),
        Message::DecisionNotice(Decision::NonEvaluable),
    ]
}

#[test]
fn every_variant_roundtrips() {
    let f = fixture(1);
    for m in sample_messages(&f) {
        let frame = m.to_frame();
        assert_eq!(m.frame_len(), frame.len(), "{}", m.name());
        let (back, used) = Message::from_frame(&frame).unwrap();
        assert_eq!(used, frame.len());
        assert_eq!(back, m);
    }
}

#[test]
fn sum_report_frame_is_22_bytes() {
    let m = Message::SumReport {
        black: SlotSum(1),
        grey: SlotSum(2),
    };
    let frame = m.to_frame();
    assert_eq!(frame.len(), 22);
    assert_eq!(&frame[..6], &[WIRE_VERSION, 4, 16, 0, 0, 0]);
    assert_eq!(SlotSum::BYTES, 8);
}

#[test]
fn truncation_and_bad_headers_are_rejected() {
    let f = fixture(2);
    for m in sample_messages(&f) {
        let frame = m.to_frame();
        for cut in [0, 1, 5, 6, frame.len() - 1] {
            assert!(matches!(Message::from_frame(&frame[..cut]), Err(Error::Wire(_))), "{} cut at {cut}", m.name());
        }
    }
    let mut frame = Message::DecisionNotice(Decision::NotListed).to_frame();
    frame[1] = 9;
    assert!(Message::from_frame(&frame).unwrap_err().to_string().contains("unknown tag"));
    frame[1] = 5;
    frame[0] = 2;
    assert!(Message::from_frame(&frame).unwrap_err().to_string().contains("version"));
    frame[0] = WIRE_VERSION;
    frame[6] = 7;
    assert!(Message::from_frame(&frame).unwrap_err().to_string().contains("decision"));

    // sum reports must carry exactly two sums
    let mut frame = vec![WIRE_VERSION, 4, 15, 0, 0, 0];
    frame.extend_from_slice(&[0; 15]);
    assert!(Message::from_frame(&frame).is_err());
}

#[test]
fn stream_errors_name_the_frame_offset() {
    let a = Message::DecisionNotice(Decision::NotListed).to_frame();
    let mut stream = a.clone();
    stream.extend_from_slice(&a);
    stream.extend_from_slice(&[WIRE_VERSION, 42, 0, 0, 0, 0]);
    assert_eq!(decode_stream(&stream[..14]).unwrap().len(), 2);
    let err = decode_stream(&stream).unwrap_err().to_string();
    assert!(err.contains("offset 14"), "{err}");
}

#[test]
fn local_sessions_decide_by_membership() {
    let f = fixture(3);
    let mut rng = StdRng::seed_from_u64(3);
    let cases = [
        (1, Decision::Listed(ListKind::Blacklist)),
        (300, Decision::Listed(ListKind::Blacklist)),
        (4, Decision::Listed(ListKind::Greylist)),
        (3, Decision::NotListed),
        (1000, Decision::NotListed),
    ];
    for (v, want) in cases {
        let (d, m) = run_local_session(&f.server, &f.client, pei(v), &mut rng).unwrap();
        assert_eq!(d, want, "pei {v}");
        assert_eq!(m.client_response_bytes, 16);
        assert!(m.client_request_bytes > 0 && m.server_response_bytes > 0);
    }
    let records = f.server.audit_log().records().unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(le_decrypt(&records[0].le_ct, &f.le.secret).unwrap(), pei(4));
}

#[test]
fn framed_byte_counts_add_up() {
    let f = fixture(4);
    let mut rng = StdRng::seed_from_u64(4);
    let (_, m) = run_local_session(&f.server, &f.client, pei(2), &mut rng).unwrap();
    let s = f.server.finished_sessions()[0];
    // request and sum report in, masked response and notice out
    assert_eq!(s.bytes.client_to_server, (6 + 8 + m.client_request_bytes + 56) + 22);
    assert_eq!(s.bytes.server_to_client, (6 + 8 + m.server_response_bytes) + (6 + 1));
}

#[test]
fn tcp_sessions_end_to_end() {
    let f = fixture(5);
    let handle = ServerHandle::spawn("127.0.0.1:0", f.server.clone()).unwrap();
    let mut rng = StdRng::seed_from_u64(5);
    let mut conn = UeConnection::connect(handle.addr, &f.client).unwrap();
    assert_eq!(conn.verify(pei(500), &mut rng).unwrap().decision, Decision::Listed(ListKind::Greylist));
    assert_eq!(conn.verify(pei(6), &mut rng).unwrap().decision, Decision::NotListed);
    let s = run_client(handle.addr, &f.client, pei(2), &mut rng).unwrap();
    assert_eq!(s.decision, Decision::Listed(ListKind::Blacklist));
    assert_eq!(s.decision.exit_code(), 2);
    assert_eq!(s.client_response_bytes, 16);
    assert_eq!(s.bytes.client_to_server, s.client_request_bytes + 6 + 8 + 56 + 22);
}

#[test]
fn concurrent_tcp_clients() {
    let f = fixture(6);
    let handle = ServerHandle::spawn("127.0.0.1:0", f.server.clone()).unwrap();
    std::thread::scope(|s| {
        for i in 0..4u64 {
            let (client, addr) = (&f.client, handle.addr);
            s.spawn(move || {
                let mut rng = StdRng::seed_from_u64(100 + i);
                let want = if i % 2 == 0 { Decision::Listed(ListKind::Blacklist) } else { Decision::NotListed };
                let v = if i % 2 == 0 { 300 } else { 7 };
                assert_eq!(run_client(addr, client, pei(v), &mut rng).unwrap().decision, want);
            });
        }
    });
    assert_eq!(f.server.finished_sessions().len(), 4);
}

#[test]
fn out_of_order_messages_abort_the_session() {
    let f = fixture(7);
    let mut rng = StdRng::seed_from_u64(7);

    // sum report before any request
    let mut s = f.server.session();
    s.handle(f.client.setup(), 0, &mut rng).unwrap();
    let early = Message::SumReport {
        black: SlotSum(0),
        grey: SlotSum(0),
    };
    assert!(matches!(s.handle(early.clone(), 22, &mut rng), Err(Error::Protocol(_))));

    // request before setup
    let mut s = f.server.session();
    let (_, req) = f.client.start(pei(1), &mut rng).unwrap();
    assert!(s.handle(req, 0, &mut rng).is_err());

    // a second request while a sum is pending
    let mut s = f.server.session();
    s.handle(f.client.setup(), 0, &mut rng).unwrap();
    let (_, req) = f.client.start(pei(1), &mut rng).unwrap();
    s.handle(req.clone(), 0, &mut rng).unwrap();
    assert!(s.handle(req, 0, &mut rng).is_err());

    // over tcp the server answers with a non-evaluable notice
    let handle = ServerHandle::spawn("127.0.0.1:0", f.server.clone()).unwrap();
    let mut conn = UeConnection::connect(handle.addr, &f.client).unwrap();
    conn.send_raw(&early).unwrap();
    assert_eq!(conn.receive().unwrap(), Some(Message::DecisionNotice(Decision::NonEvaluable)));
    assert!(f.server.audit_log().is_empty());
}

#[test]
fn tampered_sums_are_non_evaluable() {
    let f = fixture(8);
    let mut rng = StdRng::seed_from_u64(8);
    let mut s = f.server.session();
    s.handle(f.client.setup(), 0, &mut rng).unwrap();
    let (_, req) = f.client.start(pei(4), &mut rng).unwrap();
    s.handle(req, 0, &mut rng).unwrap();
    let forged = Message::SumReport {
        black: SlotSum(97),
        grey: SlotSum(0),
    };
    assert_eq!(s.handle(forged, 22, &mut rng).unwrap(), Some(Message::DecisionNotice(Decision::NonEvaluable)));
    assert!(f.server.audit_log().is_empty());
}

#[test]
fn mismatched_setup_is_refused() {
    let f = fixture(9);
    let other = fixture(10);
    let mut rng = StdRng::seed_from_u64(9);
    let mut s = f.server.session();
    // same parameters, keys from a different context instance are fine
    assert!(s.handle(other.client.setup(), 0, &mut rng).is_ok());

    let ctx = Arc::new(HeContext::new(HeParams::custom(8, 113, &[40, 40], 40, 0).unwrap()).unwrap());
    let keys = ctx.keygen(&mut rng);
    let pbh = PbhParams::new(8, 10, [7; 16]).unwrap();
    let cwc = CwcParams::for_modulus(pbh.lambda_bar(), 2, 113).unwrap();
    let stranger = UeClient::new(ctx, keys, pbh, cwc, f.le.public);
    let mut s = f.server.session();
    assert!(matches!(s.handle(stranger.setup(), 0, &mut rng), Err(Error::Protocol(_))));
}

#[test]
fn snapshot_swap_keeps_sessions_consistent() {
    let f = fixture(11);
    let mut rng = StdRng::seed_from_u64(11);
    let pbh = PbhParams::new(8, 10, [7; 16]).unwrap();
    let cwc = CwcParams::for_modulus(pbh.lambda_bar(), 2, 97).unwrap();
    let before = f.server.snapshot();
    let black = DeviceList::from_entries(ListKind::Blacklist, [9].map(pei)).unwrap();
    let registry = Registry::new(black, DeviceList::new(ListKind::Greylist), &pbh, &cwc).unwrap();
    f.server.install(&registry).unwrap();
    assert_eq!(before.black.encoded().len(), 3);
    let (d, _) = run_local_session(&f.server, &f.client, pei(9), &mut rng).unwrap();
    assert_eq!(d, Decision::Listed(ListKind::Blacklist));
    let (d, _) = run_local_session(&f.server, &f.client, pei(1), &mut rng).unwrap();
    assert_eq!(d, Decision::NotListed);
}
