#include "kdrank/encoder/config.hpp"

#include <charconv>
#include <cstdio>
#include <map>
#include <sstream>

#include "kdrank/error.hpp"

namespace kdrank {

void EncoderConfig::validate() const {
  auto fail = [](const std::string& what) {
    throw Error(ErrorKind::kContract, "encoder config: " + what);
  };
  if (num_layers == 0) fail("num_layers must be positive");
  if (hidden_size == 0) fail("hidden_size must be positive");
  if (num_heads == 0 || hidden_size % num_heads != 0) {
    fail("num_heads (" + std::to_string(num_heads) + ") must divide hidden_size (" +
         std::to_string(hidden_size) + ")");
  }
  if (vocab_size == 0 || max_position == 0 || type_vocab_size == 0) {
    fail("vocab_size, max_position and type_vocab_size must be positive");
  }
  if (num_labels < 2) fail("num_labels must be at least 2");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must lie in [0, 1)");
  if (!(layer_norm_eps > 0.0)) fail("layer_norm_eps must be positive");
}

bool EncoderConfig::operator==(const EncoderConfig& o) const {
  return num_layers == o.num_layers && hidden_size == o.hidden_size && num_heads == o.num_heads &&
         intermediate() == o.intermediate() && vocab_size == o.vocab_size &&
         max_position == o.max_position && type_vocab_size == o.type_vocab_size &&
         num_labels == o.num_labels && dropout == o.dropout && layer_norm_eps == o.layer_norm_eps;
}

std::string EncoderConfig::to_text() const {
  char eps[64], drop[64];
  std::snprintf(eps, sizeof(eps), "%.17g", layer_norm_eps);
  std::snprintf(drop, sizeof(drop), "%.17g", dropout);
  std::ostringstream out;
  out << "num_layers=" << num_layers << " hidden_size=" << hidden_size
      << " num_heads=" << num_heads << " intermediate_size=" << intermediate()
      << " vocab_size=" << vocab_size << " max_position=" << max_position
      << " type_vocab_size=" << type_vocab_size << " num_labels=" << num_labels
      << " dropout=" << drop << " layer_norm_eps=" << eps;
  return out.str();
}

EncoderConfig EncoderConfig::from_text(const std::string& text) {
  std::map<std::string, std::string> fields;
  std::istringstream in(text);
  std::string item;
  while (in >> item) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::kCorruptHeader, "config field without '=': " + item);
    }
    fields[item.substr(0, eq)] = item.substr(eq + 1);
  }
  auto take = [&](const char* key) -> const std::string& {
    auto it = fields.find(key);
    if (it == fields.end()) {
      throw Error(ErrorKind::kCorruptHeader, std::string("config lacks ") + key);
    }
    return it->second;
  };
  auto as_size = [&](const char* key) {
    const std::string& v = take(key);
    std::size_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      throw Error(ErrorKind::kCorruptHeader,
                  std::string("config field ") + key + " is not an integer: " + v);
    }
    return out;
  };
  auto as_double = [&](const char* key) {
    const std::string& v = take(key);
    try {
      std::size_t used = 0;
      const double out = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      throw Error(ErrorKind::kCorruptHeader,
                  std::string("config field ") + key + " is not a number: " + v);
    }
  };
  EncoderConfig c;
  c.num_layers = as_size("num_layers");
  c.hidden_size = as_size("hidden_size");
  c.num_heads = as_size("num_heads");
  c.intermediate_size = as_size("intermediate_size");
  c.vocab_size = as_size("vocab_size");
  c.max_position = as_size("max_position");
  c.type_vocab_size = as_size("type_vocab_size");
  c.num_labels = as_size("num_labels");
  c.dropout = as_double("dropout");
  c.layer_norm_eps = as_double("layer_norm_eps");
  return c;
}

EncoderConfig EncoderConfig::shaped(std::size_t layers, std::size_t hidden,
                                    std::size_t vocab_size,
                                    std::size_t max_position) {
  EncoderConfig c;
  c.num_layers = layers;
  c.hidden_size = hidden;
  c.num_heads = hidden % 64 == 0 ? hidden / 64 : 1;
  c.intermediate_size = 4 * hidden;
  c.vocab_size = vocab_size;
  c.max_position = max_position;
  return c;
}

std::string config_label(const EncoderConfig& config) {
  return "L" + std::to_string(config.num_layers) + "_H" +
         std::to_string(config.hidden_size);
}

}  // namespace kdrank
