#pragma once

#include <Eigen/Dense>
#include <string>

namespace seal {

// Fixed-width vector from either modality encoder, tagged with its origin.
struct Embedding {
  Eigen::VectorXd values;
  std::string modality;  // "image" or "omics"
  std::string barcode;
};

}  // namespace seal
