#include "ambiflow/error.hpp"
