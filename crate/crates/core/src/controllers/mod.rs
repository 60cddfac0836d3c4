//! Feedback laws: the sampled-data dynamic controller, the zero-order-hold
//! predictor law, the linear networked recursion, dead-beat designs for
//! chains of integrators, and the unicycle controllers.

mod dynamic;
mod feedback;
mod networked;
mod unicycle;
mod zoh;

pub use dynamic::{DynamicController, InputProfile};
pub use feedback::{FeedbackFn, NominalFeedback};
pub use networked::{
    chain_of_integrators, deadbeat_chain_gain, discrete_stability_check, DeciController,
    LtiNetworked, NetworkedWeights, Theta,
};
pub use unicycle::{
    chained_from_pose, classify_region, exact_regions, nonholonomic_constant_input,
    unicycle_pose_feedback, unicycle_region, vehicle_inputs, Region, UnicycleHold, UnicycleZoh,
};
pub use zoh::{
    input_delay_periods, measurement_delay_periods, InputRingBuffer, Uncompensated, ZohController,
};
