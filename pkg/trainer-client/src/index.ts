export {
  ClientConfig,
  ConnectionError,
  HealthStatus,
  ProtocolError,
  RewardClient,
  RolloutScore,
  ScoreItem,
} from "./client.js";
