// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "revive/failure_detection.hpp"

using namespace revive;

TEST(Heartbeat, BeatThenEarlyCheckIsQuiet) {
  HeartbeatMonitor m({1.0, 3});
  m.register_executor(0, 0.0);
  m.record_heartbeat(0, 5.0);
  EXPECT_TRUE(m.check_timeouts(5.5).empty());
  EXPECT_EQ(m.record(0).missed, 0u);
}

TEST(Heartbeat, ThreeMissedChecksFireAtThree) {
  HeartbeatMonitor m({1.0, 3});
  m.register_executor(0, 0.0);
  EXPECT_TRUE(m.check_timeouts(1.0).empty());
  EXPECT_TRUE(m.check_timeouts(2.0).empty());
  auto ev = m.check_timeouts(3.0);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].source, FaultSource::HeartbeatTimeout);
  EXPECT_EQ(ev[0].device, 0u);
  EXPECT_DOUBLE_EQ(ev[0].detected_at, 3.0);
  EXPECT_FALSE(ev[0].code.has_value());
}

TEST(Heartbeat, SteadyBeatsNeverFire) {
  HeartbeatMonitor m({1.0, 3});
  m.register_executor(0, 0.0);
  std::size_t events = 0;
  for (int i = 1; i <= 200; ++i) {
    double t = 0.5 * i;
    m.record_heartbeat(0, t);
    if (i % 2 == 0) events += m.check_timeouts(t).size();
  }
  EXPECT_EQ(events, 0u);
}

TEST(Heartbeat, UnknownExecutorThrows) {
  HeartbeatMonitor m;
  EXPECT_THROW(m.record_heartbeat(3, 0.0), LookupError);
}

TEST(Heartbeat, EmptyRegistry) {
  HeartbeatMonitor m;
  EXPECT_TRUE(m.check_timeouts(100.0).empty());
}

TEST(Heartbeat, SimultaneousSilenceOrderedById) {
  HeartbeatMonitor m({1.0, 2});
  for (ExecutorId id : {7u, 2u, 5u}) m.register_executor(id, 0.0);
  m.check_timeouts(1.0);
  m.record_heartbeat(5, 1.5);
  auto ev = m.check_timeouts(2.0);
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(ev[0].device, 2u);
  EXPECT_EQ(ev[1].device, 7u);
}

TEST(Heartbeat, FireOnceUntilReregistered) {
  HeartbeatMonitor m({1.0, 3});
  m.register_executor(1, 0.0);
  std::size_t events = 0;
  for (int t = 1; t <= 50; ++t) events += m.check_timeouts(t).size();
  EXPECT_EQ(events, 1u);
  EXPECT_TRUE(m.record(1).suspect);
  m.register_executor(1, 50.0);
  for (int t = 51; t <= 53; ++t) events += m.check_timeouts(t).size();
  EXPECT_EQ(events, 2u);
}

TEST(Heartbeat, DetectionBound) {
  // A failure at t with checks every i seconds is reported by t + k*i + i.
  for (double t_fail : {0.0, 0.3, 1.0, 2.71, 9.99}) {
    for (std::uint32_t k : {1u, 2u, 3u, 5u}) {
      const double i = 0.5;
      HeartbeatMonitor m({i, k});
      m.register_executor(0, 0.0);
      std::optional<double> detected;
      for (int n = 1; n < 1000 && !detected; ++n) {
        double now = n * i;
        if (now < t_fail) m.record_heartbeat(0, now);
        if (!m.check_timeouts(now).empty()) detected = now;
      }
      ASSERT_TRUE(detected);
      EXPECT_LE(*detected, t_fail + k * i + i + 1e-9);
      EXPECT_GE(*detected, t_fail);
    }
  }
}

TEST(Heartbeat, RejectsBadConfig) {
  EXPECT_THROW(HeartbeatMonitor({0.0, 3}), ConfigError);
  EXPECT_THROW(HeartbeatMonitor({1.0, 0}), ConfigError);
}

TEST(Classify, DefaultTable) {
  auto code = [](int l) { return FaultCode{fault_level_from_int(l), "e", 0.0, "x"}; };
  EXPECT_EQ(classify_fault(code(1)), FaultAction::Ignore);
  EXPECT_EQ(classify_fault(code(2)), FaultAction::LogOnly);
  EXPECT_EQ(classify_fault(code(3)), FaultAction::LogOnly);
  EXPECT_EQ(classify_fault(code(4)), FaultAction::TriggerRecovery);
  EXPECT_EQ(classify_fault(code(5)), FaultAction::TriggerRecovery);
  EXPECT_EQ(classify_fault(code(6)), FaultAction::TriggerRecovery);
  EXPECT_THROW(fault_level_from_int(0), ConfigError);
  EXPECT_THROW(fault_level_from_int(7), ConfigError);
}

TEST(Classify, ConfigurableTable) {
  FaultPolicy p;
  p.set(FaultLevel::L3, FaultAction::TriggerRecovery);
  EXPECT_EQ(classify_fault(FaultCode{FaultLevel::L3, "e", 0, ""}, p), FaultAction::TriggerRecovery);
  EXPECT_EQ(classify_fault(FaultCode{FaultLevel::L1, "e", 0, ""}, p), FaultAction::Ignore);
}

TEST(Poller, ReportsAtFirstPollAfterAlarm) {
  AnnotationPoller p;
  p.post(4, FaultCode{FaultLevel::L6, "evt-1", 2.5, "hbm"});
  EXPECT_TRUE(p.poll(2.0).empty());
  auto ev = p.poll(3.0);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].source, FaultSource::AnnotationReport);
  EXPECT_EQ(ev[0].device, 4u);
  EXPECT_GE(ev[0].detected_at, ev[0].code->alarm_time);
  EXPECT_EQ(ev[0].code->event_id, "evt-1");
  EXPECT_TRUE(p.poll(4.0).empty());
}
