#pragma once

#include "g3/alignment.hpp"
#include "g3/synthetic.hpp"

namespace g3::test_support {

// Four clusters, narrow embeddings and heads; trains in well under a second.
inline AlignmentDims tiny_dims(int image, int text) {
  AlignmentDims d;
  d.image = image;
  d.text = text;
  d.hidden = 24;
  d.text_space = 16;
  d.gps_space = 12;
  d.gps_rff_rows = 16;
  d.gps_hidden = 32;
  return d;
}

struct TinyWorld {
  SyntheticWorld world;
  TriModalBatch<float> data;
};

inline TinyWorld tiny_world() {
  SyntheticWorldConfig wc;
  wc.n_clusters = 4;
  wc.points_per_cluster = 32;
  wc.queries_per_cluster = 4;
  wc.image_dim = 24;
  wc.text_dim = 20;
  TinyWorld t{synthesize_world(wc), {}};
  t.data.image = t.world.database.image;
  t.data.text = t.world.database.text;
  for (const auto& r : t.world.database.metadata) t.data.points.push_back(r.point);
  return t;
}

inline TrainConfig tiny_config() {
  TrainConfig c;
  c.dims = tiny_dims(24, 20);
  c.batch_size = 32;
  c.lr = 1e-3;
  c.epochs = 4;
  return c;
}

}  // namespace g3::test_support
