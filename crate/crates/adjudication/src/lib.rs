//! Second-round expert adjudication over HTTP.
//!
//! Items the crowd did not label unanimously are queued for two experts.
//! Each expert labels independently and never sees the other's choice. When
//! both have answered, matching labels become gold, differing labels fall
//! back to the crowd plurality, and differing labels over a tied crowd drop
//! the item.
//!
//! | Method | Path | |
//! |---|---|---|
//! | GET | `/api/queue/next?expert=ID` | next item or `{"done": true}` |
//! | POST | `/api/items/{id}/labels` | body `{"expert", "label"}`; 409 on conflict |
//! | GET | `/api/stats` | kappa, progress, gold distribution |
//! | GET | `/api/export` | gold labels as CSV (`?dropped=true` lists dropped items too) |

pub mod http;
pub mod service;
pub mod state;
pub mod store;

pub use http::{router, serve, serve_on};
pub use service::{Service, ServiceError, ServiceOptions};
pub use state::{AdjudicationState, QueueItem, QueueStatus, StateConfig, Stats, SubmitOutcome};
