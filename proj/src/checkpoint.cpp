#include "epigvi/checkpoint.hpp"

#include <fstream>
#include <json.hpp>

namespace epigvi {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "epigvi-flow-checkpoint";
constexpr int kVersion = 1;

std::string hash_hex(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

// Non-finite doubles serialize as null.
double num_or_nan(const json& v) {
  if (v.is_null()) return std::numeric_limits<double>::quiet_NaN();
  return v.get<double>();
}

}  // namespace

void save_checkpoint(const FlowModel& model, const TrainMeta& meta,
                     const std::string& path) {
  const FlowConfig& cfg = model.config();
  json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["architecture"] = {
      {"dim", cfg.dim},
      {"transforms", cfg.transforms},
      {"hidden_layers", cfg.hidden_layers},
      {"hidden_units", cfg.hidden_units},
      {"bins", cfg.bins},
      {"tail_bound", cfg.tail_bound},
      {"beta_max", cfg.beta_max},
      {"min_bin_fraction", cfg.min_bin_fraction},
      {"min_derivative", cfg.min_derivative},
  };
  j["architecture_hash"] = hash_hex(cfg.arch_hash());
  j["metadata"] = {
      {"epoch", meta.epoch},
      {"train_loss", meta.train_loss},
      {"val_loss", meta.val_loss},
      {"sims_used", meta.sims_used},
      {"stop_reason", meta.stop_reason},
  };
  json tensors = json::array();
  for (const auto& p : model.parameters()) {
    json t;
    t["rows"] = p.rows();
    t["cols"] = p.cols();
    json data = json::array();
    for (Eigen::Index i = 0; i < p.rows(); ++i)
      for (Eigen::Index jc = 0; jc < p.cols(); ++jc) data.push_back(p(i, jc));
    t["data"] = std::move(data);
    tensors.push_back(std::move(t));
  }
  j["parameters"] = std::move(tensors);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump(1) << "\n";
  if (!out) throw IoError("failed writing '" + path + "'");
}

FlowModel load_checkpoint(const std::string& path, TrainMeta* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError("checkpoint '" + path + "': " + e.what());
  }
  try {
    if (j.at("format") != kFormat || j.at("version") != kVersion)
      throw ParseError("checkpoint '" + path +
                       "': unknown format or version");
    const json& a = j.at("architecture");
    FlowConfig cfg;
    cfg.dim = a.at("dim");
    cfg.transforms = a.at("transforms");
    cfg.hidden_layers = a.at("hidden_layers");
    cfg.hidden_units = a.at("hidden_units");
    cfg.bins = a.at("bins");
    cfg.tail_bound = a.at("tail_bound");
    cfg.beta_max = a.at("beta_max");
    cfg.min_bin_fraction = a.at("min_bin_fraction");
    cfg.min_derivative = a.at("min_derivative");
    if (j.at("architecture_hash") != hash_hex(cfg.arch_hash()))
      throw ConfigError("checkpoint '" + path +
                        "': architecture hash mismatch");

    FlowModel model(cfg, 0);
    auto& params = model.parameters();
    const json& tensors = j.at("parameters");
    if (tensors.size() != params.size())
      throw ParseError("checkpoint '" + path +
                       "': unexpected parameter tensor count");
    for (std::size_t k = 0; k < params.size(); ++k) {
      const json& t = tensors.at(k);
      const Eigen::Index rows = t.at("rows"), cols = t.at("cols");
      if (rows != params[k].rows() || cols != params[k].cols())
        throw ParseError("checkpoint '" + path + "': tensor " +
                         std::to_string(k) + " has the wrong shape");
      const json& data = t.at("data");
      if (static_cast<Eigen::Index>(data.size()) != rows * cols)
        throw ParseError("checkpoint '" + path + "': tensor " +
                         std::to_string(k) + " has the wrong size");
      Eigen::Index idx = 0;
      for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index jc = 0; jc < cols; ++jc)
          params[k](i, jc) = data.at(idx++);
    }
    if (meta != nullptr) {
      const json& m = j.at("metadata");
      meta->epoch = m.at("epoch");
      meta->train_loss = num_or_nan(m.at("train_loss"));
      meta->val_loss = num_or_nan(m.at("val_loss"));
      meta->sims_used = m.at("sims_used");
      meta->stop_reason = m.at("stop_reason");
    }
    return model;
  } catch (const json::exception& e) {
    throw ParseError("checkpoint '" + path + "': " + e.what());
  }
}

}  // namespace epigvi
