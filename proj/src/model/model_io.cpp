#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tmur/errors.hpp"
#include "tmur/model.hpp"

namespace tmur {

namespace {

constexpr const char* kMagic = "tmur-model 1";

nlohmann::json config_to_json(const ModelConfig& c) {
  return nlohmann::json{{"view_dims", c.view_dims},
                        {"aligned_dim", c.aligned_dim},
                        {"hidden_dims", c.hidden_dims},
                        {"num_classes", c.num_classes},
                        {"temperature", c.temperature},
                        {"use_attention", c.use_attention},
                        {"router_mode", std::string(router_mode_name(c.router_mode))}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.view_dims = j.at("view_dims").get<std::vector<std::size_t>>();
  c.aligned_dim = j.at("aligned_dim").get<std::size_t>();
  c.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.temperature = j.at("temperature").get<double>();
  c.use_attention = j.at("use_attention").get<bool>();
  c.router_mode = parse_router_mode(j.at("router_mode").get<std::string>());
  return c;
}

void write_entry(std::ostream& out, const char* kind, const std::string& name, const DenseArray& a) {
  out << kind << ' ' << name << ' ' << a.rows() << ' ' << a.cols() << '\n';
  char buf[32];
  for (std::size_t i = 0; i < a.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", a.data()[i]);
    if (i > 0) out << ' ';
    out << buf;
  }
  out << '\n';
}

void read_entry(std::istream& in, const std::string& path, const char* kind, const std::string& name, DenseArray& dest) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": truncated model file, expected " + name);
  std::istringstream header(line);
  std::string k, n;
  std::size_t rows = 0, cols = 0;
  header >> k >> n >> rows >> cols;
  if (k != kind || n != name) throw DataError(path + ": expected " + std::string(kind) + " " + name + ", found '" + line + "'");
  if (rows != dest.rows() || cols != dest.cols()) throw DataError(path + ": shape mismatch for " + name);
  if (!std::getline(in, line)) throw DataError(path + ": missing values for " + name);
  std::istringstream values(line);
  for (std::size_t i = 0; i < dest.size(); ++i) {
    std::string tok;
    if (!(values >> tok)) throw DataError(path + ": too few values for " + name);
    char* end = nullptr;
    dest.data()[i] = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw DataError(path + ": bad number '" + tok + "' in " + name);
  }
}

}  // namespace

void Model::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write model file " + path.string());
  out << kMagic << '\n';
  out << "config " << config_to_json(config_).dump() << '\n';
  for (const Parameter& p : params_) write_entry(out, "param", p.name, p.value);
  for (std::size_t v = 0; v < standardizer_.mean.size(); ++v) {
    write_entry(out, "stat", "standardizer.mean." + std::to_string(v), standardizer_.mean[v]);
    write_entry(out, "stat", "standardizer.scale." + std::to_string(v), standardizer_.scale[v]);
  }
  out << "end\n";
  if (!out) throw DataError("failed writing model file " + path.string());
}

Model Model::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file " + path.string());
  const std::string p = path.string();
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw DataError(p + ": not a model file");
  if (!std::getline(in, line) || line.rfind("config ", 0) != 0) throw DataError(p + ": missing config line");
  ModelConfig config;
  try {
    config = config_from_json(nlohmann::json::parse(line.substr(7)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(p + ": bad config: " + e.what());
  }
  Model model(config, 0);
  for (Parameter& param : model.params_) read_entry(in, p, "param", param.name, param.value);
  for (std::size_t v = 0; v < model.standardizer_.mean.size(); ++v) {
    read_entry(in, p, "stat", "standardizer.mean." + std::to_string(v), model.standardizer_.mean[v]);
    read_entry(in, p, "stat", "standardizer.scale." + std::to_string(v), model.standardizer_.scale[v]);
  }
  if (!std::getline(in, line) || line != "end") throw DataError(p + ": missing end marker");
  return model;
}

}  // namespace tmur
