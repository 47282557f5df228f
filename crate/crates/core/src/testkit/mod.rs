//! Fixtures shared by unit, integration and acceptance tests: an instrumented
//! HTTP stub, a scripted git repository builder and a ready-made project
//! with a planted fix.

mod git_fixture;
mod scenario;
mod stub_server;

pub use git_fixture::FixtureRepo;
pub use scenario::{MiniProject, MINI_CVE, VULNERABLE_FUNCTION};
pub use stub_server::{StubRequest, StubServer};
