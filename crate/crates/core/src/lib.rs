pub mod arn;
pub mod config;
pub mod detector;
pub mod kernel;
pub mod metrics;
pub mod queuing;
pub mod routing;
pub mod runner;
pub mod sim;
pub mod topology;
pub mod traffic;

pub use config::Config;
pub use kernel::SimTime;
pub use metrics::{EfficiencySeries, Summary};
pub use queuing::{SqsScheme, Vc};
pub use routing::{RoutingKind, RoutingMode};
pub use sim::{simulate, Counters, Delivery, FlowSpec, RunOutput, SimError, Simulation, Workload};
pub use topology::{NodeId, PortId, RlftParams, SwitchId, Topology};
pub use traffic::{Trace, TraceMessage, TrafficKind};
