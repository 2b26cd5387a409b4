#pragma once

// Network checkpoints: PTEN containers whose manifest embeds the spec.

#include <string>

#include <json.hpp>

#include "distill/net.hpp"
#include "distill/pten.hpp"

namespace distill {

inline void save_checkpoint(const Network& net, const std::string& path) {
  nlohmann::json extra;
  extra["kind"] = "checkpoint";
  extra["spec"] = spec_to_json(net.spec);
  extra["modality"] = net.modality_tag;
  save_pten(path, net.parameters(), extra);
}

inline Network load_checkpoint(const std::string& path) {
  PtenFile file = load_pten(path);
  if (!file.manifest.contains("spec")) {
    throw PtenError(PtenError::Kind::bad_manifest,
                    "checkpoint '" + path + "' has no network spec");
  }
  Network net;
  net.spec = spec_from_json(file.manifest["spec"]);
  net.modality_tag = file.manifest.value("modality", "");
  propagate_shapes(net.spec);
  for (const auto& [name, t] : file.tensors) {
    const auto dot = name.find('.');
    if (dot == std::string::npos) {
      throw PtenError(PtenError::Kind::bad_manifest,
                      "checkpoint '" + path + "': parameter '" + name +
                          "' is not layer.param");
    }
    Tensor p = t;
    p.set_requires_grad(true);
    net.params[name.substr(0, dot)][name.substr(dot + 1)] = p;
  }
  // Missing parameters would surface later with confusing errors; check now.
  for (const auto& l : net.spec.layers) {
    const bool needs = l.kind == LayerKind::conv || l.kind == LayerKind::linear ||
                       l.kind == LayerKind::scale;
    if (needs && !net.params.count(l.name)) {
      throw PtenError(PtenError::Kind::bad_manifest,
                      "checkpoint '" + path + "': no parameters for layer '" +
                          l.name + "'");
    }
  }
  return net;
}

}  // namespace distill
