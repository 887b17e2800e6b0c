mod support;

use support::*;
use tilecheck_harness::planner::{ProposalError, DEFAULT_PLANNER_PROMPT};
use tilecheck_harness::transport::{Purpose, Role};
use tilecheck_harness::{
    parse_proposals, plan, update_params, KnowledgeBase, PlanContext, PlanError, PlannerParams, Proposal,
    ScriptedTransport,
};

fn ctx(src: &str) -> PlanContext<'_> {
    PlanContext {
        source: src,
        feedback: "all checks pass",
        last_attempt: None,
    }
}

fn scripted(replies: &[Result<&str, &str>]) -> ScriptedTransport {
    ScriptedTransport::from_replies(
        replies
            .iter()
            .map(|r| (Purpose::Plan, r.map(str::to_string).map_err(str::to_string))),
    )
}

#[test]
fn two_scripted_proposals_come_back_sorted() {
    let kb = shipped_kb();
    let mut t = scripted(&[Ok(r#"[
        {"optimization": "loop_unrolling", "context": "unroll s", "score": 0.25},
        {"optimization": "split_k", "context": "two slices", "score": 0.75}]"#)]);
    let ps = plan(&ctx("def k(): pass"), &kb, &PlannerParams::default(), &mut t).unwrap();
    assert_eq!(
        ps,
        vec![
            Proposal { optimization: "split_k".into(), context: "two slices".into(), score: 0.75 },
            Proposal { optimization: "loop_unrolling".into(), context: "unroll s".into(), score: 0.25 },
        ]
    );
    assert_eq!(t.requests.len(), 1);
}

#[test]
fn malformed_twice_gives_no_proposals() {
    let kb = shipped_kb();
    let mut t = scripted(&[Ok("I suggest pipelining."), Ok("{\"not\": \"an array\"}")]);
    let ps = plan(&ctx("def k(): pass"), &kb, &PlannerParams::default(), &mut t).unwrap();
    assert!(ps.is_empty());
    assert_eq!(t.requests.len(), 2);
    let reask = &t.requests[1].1;
    assert_eq!(reask[2].role, Role::Assistant);
    assert!(reask[3].content.contains("rejected"));
}

#[test]
fn one_reask_recovers() {
    let kb = shipped_kb();
    let mut t = scripted(&[
        Ok(r#"[{"optimization": "prefetching", "context": "", "score": 0.5}]"#),
        Ok(r#"[{"optimization": "async_memcpy", "context": "", "score": 0.5}]"#),
    ]);
    let ps = plan(&ctx("def k(): pass"), &kb, &PlannerParams::default(), &mut t).unwrap();
    assert_eq!(ps.len(), 1);
    assert!(t.requests[1].1[3].content.contains("unknown optimization `prefetching`"));
}

#[test]
fn transport_failure_is_retried_once() {
    let kb = shipped_kb();
    let ok = r#"[{"optimization": "split_k", "context": "", "score": 1}]"#;
    let mut t = scripted(&[Err("timeout"), Ok(ok)]);
    assert_eq!(plan(&ctx("def k(): pass"), &kb, &PlannerParams::default(), &mut t).unwrap().len(), 1);
    let mut t = scripted(&[Err("timeout"), Err("timeout")]);
    assert!(matches!(
        plan(&ctx("def k(): pass"), &kb, &PlannerParams::default(), &mut t),
        Err(PlanError::Transport(_))
    ));
}

#[test]
fn empty_kb_plans_nothing_without_a_request() {
    let mut t = ScriptedTransport::default();
    let ps = plan(&ctx("def k(): pass"), &KnowledgeBase::default(), &PlannerParams::default(), &mut t).unwrap();
    assert!(ps.is_empty());
    assert!(t.requests.is_empty());
}

#[test]
fn request_carries_theta_catalog_and_kernel() {
    let kb = shipped_kb();
    let src = read("fixtures/gemm_staging.tk");
    let mut t = scripted(&[Ok("[]")]);
    let c = PlanContext {
        source: &src,
        feedback: "line 26 conformity: 0 of 16384 points fail",
        last_attempt: Some("rejected: parse error"),
    };
    plan(&c, &kb, &PlannerParams::new("custom theta"), &mut t).unwrap();
    let msgs = &t.requests[0].1;
    assert_eq!((msgs[0].role, msgs[0].content.as_str()), (Role::System, "custom theta"));
    for e in &kb.entries {
        assert!(msgs[1].content.contains(&format!("- {} [{}]", e.name, e.category)));
    }
    assert!(msgs[1].content.contains(&src));
    assert!(msgs[1].content.contains("rejected: parse error"));
}

#[test]
fn schema_violations_are_rejected() {
    let kb = shipped_kb();
    let cases = [
        (r#"[{"optimization": "x", "context": "", "score": 0.5}]"#, "unknown"),
        (r#"[{"optimization": "split_k", "context": "", "score": 1.5}]"#, "score"),
        (r#"[{"optimization": "split_k", "context": "", "score": -0.1}]"#, "score"),
        (r#"[{"optimization": "split_k", "score": 0.5}]"#, "json"),
        (r#"[{"optimization": "split_k", "context": "", "score": 0.5, "extra": 1}]"#, "json"),
        (r#"[{"optimization": "split_k", "context": "", "score": "high"}]"#, "json"),
    ];
    for (reply, kind) in cases {
        let err = parse_proposals(reply, &kb).unwrap_err();
        let ok = match kind {
            "unknown" => matches!(err, ProposalError::UnknownOptimization { .. }),
            "score" => matches!(err, ProposalError::Score { .. }),
            _ => matches!(err, ProposalError::Json(_)),
        };
        assert!(ok, "{reply}: {err}");
    }
}

#[test]
fn expert_script_for_gemm_references_only_loaded_entries() {
    let kb = shipped_kb();
    let script: serde_json::Value = serde_json::from_str(&read("demo/gemm/script.json")).unwrap();
    let mut valid = 0;
    for reply in script["plan"].as_array().unwrap() {
        if let Ok(ps) = parse_proposals(reply.as_str().unwrap(), &kb) {
            valid += 1;
            for p in ps {
                assert!(kb.get(&p.optimization).is_some(), "{}", p.optimization);
                assert!(p.score.is_finite());
            }
        }
    }
    assert_eq!(valid, 5);
}

#[test]
fn update_appends_a_version_and_keeps_history() {
    let p0 = PlannerParams::default();
    let mut t = ScriptedTransport::from_replies([(Purpose::Update, Ok("revised theta\n".to_string()))]);
    let p1 = update_params(&p0, "be more careful with swizzles", &mut t);
    assert_eq!(p1.version(), p0.version() + 1);
    assert_eq!(p1.theta(), "revised theta");
    assert_eq!(p1.at(0), Some(DEFAULT_PLANNER_PROMPT));
    assert!(t.requests[0].1[1].content.contains("be more careful with swizzles"));
}

#[test]
fn update_failure_or_empty_reply_leaves_params_unchanged() {
    let p0 = PlannerParams::new("theta zero");
    for reply in [Err("down".to_string()), Ok("   ".to_string())] {
        let mut t = ScriptedTransport::from_replies([(Purpose::Update, reply)]);
        let p1 = update_params(&p0, "critique", &mut t);
        assert_eq!(p1, p0);
    }
}

#[test]
#[should_panic(expected = "non-empty")]
fn empty_planner_prompt_is_refused() {
    PlannerParams::new("  ");
}
